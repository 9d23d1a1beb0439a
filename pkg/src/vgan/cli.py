"""Command-line entry point: ``vgan <command> --config PATH --out DIR``.

Exit status: 0 success, 2 configuration error, 3 runtime failure or
divergence, 4 file I/O error.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import logging
import os
import sys

import numpy as np

from .config import ConfigError, TrainConfig, dump_config, load_config
from .data import Dataset, SynthSpec, load_idx, mnist_5k_to_idx, mode_centers, save_points_csv, synth
from .ndiff import NonFiniteError, load_checkpoint

log = logging.getLogger("vgan")

COMMANDS = ("train-vgan", "train-vcd", "train-gan", "sample", "chain", "eval-bound",
            "augment-train", "grad-check", "prepare-mnist")
TRAIN_LOOPS = {"train-vgan": "vgan", "train-vcd": "vcd", "train-gan": "gan"}

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME, EXIT_IO = 0, 2, 3, 4


def build_parser():
    p = argparse.ArgumentParser(prog="vgan", description=__doc__.splitlines()[0])
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, help="override train.seed")
    p.add_argument("--steps", type=int, help="override chain.steps")
    p.add_argument("--rho", type=float, help="override vcd.rho")
    p.add_argument("--checkpoint", help="override sample.checkpoint")
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def resolve_config(args):
    cfg = load_config(args.config) if args.config else TrainConfig()
    changes = {}
    if args.seed is not None:
        if args.seed < 0:
            raise ConfigError("--seed must be a non-negative integer")
        changes["train_seed"] = args.seed
    if args.steps is not None:
        changes["chain_steps"] = args.steps
    if args.rho is not None:
        changes["vcd_rho"] = args.rho
    if args.checkpoint is not None:
        changes["sample_checkpoint"] = args.checkpoint
    if args.command in TRAIN_LOOPS:
        changes["train_loop"] = TRAIN_LOOPS[args.command]
    elif args.command == "chain":
        changes["train_loop"] = "vcd"
    return cfg.replace(**changes)


def load_dataset(cfg):
    if cfg.data_kind == "idx":
        if not cfg.data_images:
            raise ConfigError("data.images is required when data.kind = idx")
        ds = load_idx(cfg.data_images, cfg.data_labels or None)
    else:
        ds = synth(synth_spec(cfg), np.random.default_rng(cfg.data_seed))
    if cfg.data_limit:
        ds = ds.subset(slice(0, cfg.data_limit))
    return ds


def synth_spec(cfg):
    kind = "ring-mixture" if cfg.data_kind == "ring" else "grid-mixture"
    return SynthSpec(kind, cfg.data_modes, cfg.data_sigma, cfg.data_n)


def _load_models(cfg, shape):
    from .training import build_models, restore

    if not cfg.sample_checkpoint:
        raise ConfigError("sample.checkpoint (or --checkpoint) is required")
    energy, gen = build_models(cfg, shape, np.random.default_rng(0))
    restore(energy, gen, load_checkpoint(cfg.sample_checkpoint))
    return energy, gen


# --------------------------------------------------------------------------
# commands


def cmd_train(cfg, out):
    from . import plotting
    from .images import save_grid
    from .training import train

    ds = load_dataset(cfg)
    energy, gen, trainlog = train(cfg, ds, out_dir=out)
    plotting.plot_train_log(trainlog, os.path.join(out, "train_log.png"), title=f"{cfg.train_loop} training")
    rng = np.random.default_rng(cfg.train_seed)
    if cfg.train_loop == "vcd":
        from .generator import transition_sample

        x = ds.images[:cfg.sample_n]
        samples = transition_sample(gen, x, rng).x_tilde
    else:
        samples = gen.sample(cfg.sample_n, rng)
    _write_samples(cfg, samples, ds, out)
    print(f"trained {cfg.train_loop}: {len(trainlog.records)} iterations -> {out}")


def _write_samples(cfg, samples, ds, out):
    from . import plotting
    from .images import save_grid

    if ds.shape[1] > 1:
        save_grid(samples, os.path.join(out, "samples.png"), rows=cfg.sample_rows)
    else:
        save_points_csv(Dataset(samples), os.path.join(out, "samples.csv"))
        centers = mode_centers(synth_spec(cfg))
        plotting.plot_points(samples, os.path.join(out, "samples_scatter.png"), centers=centers,
                             data=ds.images[:2000])


def cmd_sample(cfg, out):
    ds = load_dataset(cfg)
    _, gen = _load_models(cfg, ds.shape)
    rng = np.random.default_rng(cfg.train_seed)
    if cfg.train_loop == "vcd":
        from .generator import transition_sample

        samples = transition_sample(gen, ds.images[:cfg.sample_n], rng).x_tilde
    else:
        samples = gen.sample(cfg.sample_n, rng)
    _write_samples(cfg, samples, ds, out)
    print(f"wrote {len(samples)} samples -> {out}")


def cmd_chain(cfg, out):
    from .generator import simulate_chain
    from .images import save_grid

    if cfg.train_loop != "vcd":
        raise ConfigError("chain needs a vcd checkpoint (train.loop = vcd)")
    if cfg.chain_steps < 1:
        raise ConfigError("chain.steps must be >= 1")
    ds = load_dataset(cfg)
    _, g = _load_models(cfg, ds.shape)
    x0 = ds.images[-cfg.chain_n:]
    steps = simulate_chain(g, x0, cfg.chain_steps, np.random.default_rng(cfg.train_seed))
    frames = [x0] + steps
    grid = np.concatenate(frames)
    path = os.path.join(out, "chain.png")
    save_grid(grid, path, rows=len(frames), cols=len(x0))
    with open(os.path.join(out, "chain_steps.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("step", "mean_l2_change", "min_pixel", "max_pixel"))
        for t in range(1, len(frames)):
            delta = np.sqrt(((frames[t] - frames[t - 1]) ** 2).reshape(len(x0), -1).sum(axis=1)).mean()
            w.writerow((t, repr(float(delta)), repr(float(frames[t].min())), repr(float(frames[t].max()))))
    print(f"chain of {cfg.chain_steps} steps from {len(x0)} images -> {path}")


def cmd_eval_bound(cfg, out):
    from . import plotting
    from .toyeval import QuadratureGrid, bound_value, energy_fn, write_bound_reports

    ds = load_dataset(cfg)
    if ds.shape != (1, 1, 2):
        raise ConfigError("eval-bound works on 2D synthetic data only")
    energy, _ = _load_models(cfg, ds.shape)
    r = cfg.eval_range
    grid = QuadratureGrid((-r, -r), (r, r), cfg.eval_points)
    rng = np.random.default_rng(cfg.train_seed)
    n = cfg.eval_samples
    rows = []
    uniform = rng.uniform(-r, r, size=(n, 2))
    rows.append(("uniform", bound_value(energy, ds, uniform, np.log(grid.volume), grid)))
    # q = the model density made piecewise constant on a partition of the box
    # into equal cells, so both sampling and entropy are exact for q
    cell = 2 * r / cfg.eval_points
    centres = -r + cell * (np.arange(cfg.eval_points) + 0.5)
    cx, cy = np.meshgrid(centres, centres, indexing="ij")
    pts = np.stack([cx.reshape(-1), cy.reshape(-1)], axis=1)
    logp = -energy_fn(energy)(pts)
    logp -= np.logaddexp.reduce(logp)
    p = np.exp(logp)
    idx = rng.choice(len(pts), size=n, p=p / p.sum())
    samples = pts[idx] + rng.uniform(-cell / 2, cell / 2, size=(n, 2))
    h_model = float(-(p * logp).sum() + 2.0 * np.log(cell))
    rows.append(("model-grid", bound_value(energy, ds, samples, h_model, grid)))
    path = os.path.join(out, "bound_report.csv")
    write_bound_reports(rows, path)
    side = cfg.eval_points
    surface = energy_fn(energy)(grid.nodes()[0]).reshape(side, side)
    plotting.plot_energy_surface(surface, -r, r, os.path.join(out, "energy_surface.png"),
                                 data=ds.images[:2000], title="exp(-E) on the evaluation grid")
    for label, rep in rows:
        print(f"{label}: bound {rep.bound:.4f} exact nll {rep.exact_nll:.4f} gap {rep.gap:.4f}")


def cmd_augment_train(cfg, out):
    from . import plotting
    from .semisup import split_labeled, train_classifier, write_results

    ds = load_dataset(cfg)
    if ds.labels is None:
        raise ConfigError("augment-train needs labels (data.labels)")
    labeled, val, test, _ = split_labeled(ds, cfg.clf_labeled, cfg.clf_val, cfg.clf_test)
    gen, name = None, "No augmentation"
    if cfg.sample_checkpoint:
        vcd_cfg = cfg.replace(train_loop="vcd")
        _, gen = _load_models(vcd_cfg, ds.shape)
        name = f"VCD (rho={cfg.vcd_rho:g})"
    res = train_classifier(cfg, labeled, val, test, gen=gen, seed=cfg.train_seed)
    tag = f"{os.path.basename(cfg.data_images) or 'data'}-{len(labeled)}"
    write_results([(name, tag, 100.0 * res.test_error)], os.path.join(out, "results.csv"))
    plotting.plot_classifier_history({name: res.history}, os.path.join(out, "classifier_history.png"))
    print(f"{name}: test error {100.0 * res.test_error:.2f}% (epoch {res.best_epoch})")


def cmd_grad_check(cfg, out):
    from .checks import TOLERANCE, gradient_suite

    errors = gradient_suite(seed=cfg.train_seed)
    with open(os.path.join(out, "grad_check.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(("case", "max_relative_error"))
        for k, v in errors.items():
            w.writerow((k, repr(v)))
    worst = max(errors.values())
    print(f"max relative error {worst:.3e}")
    return EXIT_OK if worst < TOLERANCE else EXIT_RUNTIME


def cmd_prepare_mnist(cfg, out):
    images, labels = mnist_5k_to_idx(out)
    print(f"wrote {images} and {labels}")


HANDLERS = {
    "train-vgan": cmd_train,
    "train-vcd": cmd_train,
    "train-gan": cmd_train,
    "sample": cmd_sample,
    "chain": cmd_chain,
    "eval-bound": cmd_eval_bound,
    "augment-train": cmd_augment_train,
    "grad-check": cmd_grad_check,
    "prepare-mnist": cmd_prepare_mnist,
}


def _thread_limit():
    n = os.environ.get("VGF_THREADS")
    if not n:
        return contextlib.nullcontext()
    from threadpoolctl import threadpool_limits

    return threadpool_limits(int(n))


def run(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
        os.makedirs(args.out, exist_ok=True)
        with open(os.path.join(args.out, "config.resolved.txt"), "w", encoding="utf-8") as fh:
            fh.write(dump_config(cfg))
        with _thread_limit():
            status = HANDLERS[args.command](cfg, args.out)
        return EXIT_OK if status is None else status
    except ConfigError as exc:
        print(f"vgan: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"vgan: i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (NonFiniteError, RuntimeError, ValueError) as exc:
        print(f"vgan: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
