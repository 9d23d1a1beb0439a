"""Report figures written next to the CSV outputs.

Uses the non-interactive Agg backend; every function writes one file and
closes its figure.
"""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

DPI = 110


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=DPI)
    plt.close(fig)
    return path


def plot_train_log(trainlog, path, title=None):
    """Energies, batch entropies and generator loss against iteration."""
    it = trainlog.column("iteration")
    fig, axes = plt.subplots(1, 3, figsize=(12, 3.4))
    ax = axes[0]
    ax.plot(it, trainlog.column("energy_data"), lw=0.8, label="data")
    ax.plot(it, trainlog.column("energy_gen"), lw=0.8, label="generated")
    ax.set_xlabel("iteration")
    ax.set_ylabel("mean energy")
    ax.legend(frameon=False)
    ax = axes[1]
    for name, label in (("entropy_data", "H~ data"), ("entropy_gen", "H~ generated")):
        col = trainlog.column(name)
        if np.isfinite(col).any():
            ax.plot(it, col, lw=0.8, label=label)
    ax.set_xlabel("iteration")
    ax.set_ylabel("batch entropy (nats)")
    if ax.lines:
        ax.legend(frameon=False)
    ax = axes[2]
    ax.plot(it, trainlog.column("gen_loss"), lw=0.8, color="k", label="generator loss")
    recon = trainlog.column("recon_mse")
    if np.isfinite(recon).any():
        ax2 = ax.twinx()
        ax2.plot(it, recon, lw=0.8, color="tab:red")
        ax2.set_ylabel("reconstruction MSE", color="tab:red")
    ax.set_xlabel("iteration")
    ax.set_ylabel("generator loss")
    if title:
        fig.suptitle(title)
    return _finish(fig, path)


def plot_points(samples, path, centers=None, data=None, title=None, lim=1.6):
    """Scatter of 2D samples, optionally over the data and the mode centres."""
    pts = np.asarray(samples).reshape(len(samples), -1)
    fig, ax = plt.subplots(figsize=(4.2, 4.2))
    if data is not None:
        d = np.asarray(data).reshape(len(data), -1)
        ax.scatter(d[:, 0], d[:, 1], s=2, c="0.75", lw=0, label="data")
    ax.scatter(pts[:, 0], pts[:, 1], s=3, c="tab:blue", lw=0, label="samples")
    if centers is not None:
        c = np.asarray(centers)
        ax.scatter(c[:, 0], c[:, 1], marker="x", c="tab:red", s=30, label="modes")
    ax.set_xlim(-lim, lim)
    ax.set_ylim(-lim, lim)
    ax.set_aspect("equal")
    ax.legend(frameon=False, fontsize=7, loc="upper right")
    if title:
        ax.set_title(title, fontsize=9)
    return _finish(fig, path)


def plot_energy_surface(energies, lo, hi, path, data=None, title=None):
    """Heat map of ``exp(-E)`` on a square grid (``energies`` is points x points)."""
    fig, ax = plt.subplots(figsize=(4.6, 4.0))
    im = ax.imshow(np.exp(-(energies - energies.min())).T, origin="lower", extent=(lo, hi, lo, hi),
                   cmap="viridis", aspect="equal")
    fig.colorbar(im, ax=ax, label="unnormalised density")
    if data is not None:
        d = np.asarray(data).reshape(len(data), -1)
        ax.scatter(d[:, 0], d[:, 1], s=1, c="w", lw=0, alpha=0.4)
    if title:
        ax.set_title(title, fontsize=9)
    return _finish(fig, path)


def plot_classifier_history(histories, path):
    """Validation error per epoch; ``histories`` maps label -> [(epoch, loss, val_error)]."""
    fig, ax = plt.subplots(figsize=(5.2, 3.4))
    for label, hist in histories.items():
        h = np.array(hist, dtype=np.float64)
        ax.plot(h[:, 0], 100.0 * h[:, 2], lw=1.0, label=label)
    ax.set_xlabel("epoch")
    ax.set_ylabel("validation error (%)")
    ax.set_yscale("log")
    ax.legend(frameon=False, fontsize=8)
    return _finish(fig, path)
