"""Datasets: MNIST IDX files, synthetic 2D mixtures, seeded minibatches."""
from __future__ import annotations

import csv
import gzip
import importlib.util
import os
import struct
from dataclasses import dataclass
from typing import Optional

import numpy as np

IDX_IMAGES = 0x00000803
IDX_LABELS = 0x00000801


class IdxError(ValueError):
    pass


@dataclass
class Dataset:
    images: np.ndarray  # (n, C, H, W), float64 in [0, 1] for image data
    labels: Optional[np.ndarray] = None

    def __post_init__(self):
        self.images = np.asarray(self.images, dtype=np.float64)
        if self.images.ndim != 4:
            raise ValueError(f"images must be (n, C, H, W), got {self.images.shape}")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.images):
                raise ValueError("label count does not match image count")

    def __len__(self):
        return len(self.images)

    @property
    def shape(self):
        return self.images.shape[1:]

    def subset(self, idx):
        idx = np.asarray(idx) if not isinstance(idx, slice) else idx
        labels = None if self.labels is None else self.labels[idx]
        return Dataset(self.images[idx], labels)


@dataclass(frozen=True)
class SynthSpec:
    kind: str = "ring-mixture"
    modes: int = 8
    sigma: float = 0.05
    n: int = 10000


def _read_exact(f, n, path):
    chunk = f.read(n)
    if len(chunk) != n:
        raise IdxError(f"{path}: truncated file")
    return chunk


def _read_idx(path, expected_magic, ndim):
    opener = gzip.open if str(path).endswith(".gz") else open
    with opener(path, "rb") as f:
        (magic,) = struct.unpack(">I", _read_exact(f, 4, path))
        if magic != expected_magic:
            raise IdxError(f"{path}: bad magic 0x{magic:08x}")
        dims = struct.unpack(f">{ndim}I", _read_exact(f, 4 * ndim, path))
        size = int(np.prod(dims))
        data = np.frombuffer(_read_exact(f, size, path), dtype=np.uint8)
        if f.read(1):
            raise IdxError(f"{path}: trailing bytes after {size} items")
    return data.reshape(dims)


def load_idx(images_path, labels_path=None):
    """Read an IDX image file (and optionally labels); pixels become k/255."""
    raw = _read_idx(images_path, IDX_IMAGES, 3)
    images = raw[:, None, :, :].astype(np.float64) / 255.0
    labels = None
    if labels_path:
        labels = _read_idx(labels_path, IDX_LABELS, 1).astype(np.int64)
        if len(labels) != len(images):
            raise IdxError(f"count mismatch: {len(images)} images, {len(labels)} labels")
    return Dataset(images, labels)


def write_idx(dataset, images_path, labels_path=None):
    """Write images (rounded to bytes) and labels in IDX format."""
    imgs = np.rint(np.clip(dataset.images[:, 0], 0.0, 1.0) * 255.0).astype(np.uint8)
    with open(images_path, "wb") as f:
        f.write(struct.pack(">IIII", IDX_IMAGES, *imgs.shape))
        f.write(imgs.tobytes())
    if labels_path is not None:
        if dataset.labels is None:
            raise ValueError("dataset has no labels to write")
        with open(labels_path, "wb") as f:
            f.write(struct.pack(">II", IDX_LABELS, len(dataset.labels)))
            f.write(dataset.labels.astype(np.uint8).tobytes())


def synth(spec: SynthSpec, rng):
    """2D Gaussian mixture points shaped as (n, 1, 1, 2) with mode labels.

    ``ring-mixture`` places the modes evenly on the unit circle;
    ``grid-mixture`` on a centred square lattice with unit spacing.
    """
    if spec.modes < 1 or spec.sigma <= 0 or spec.n < 1:
        raise ValueError("synth needs modes >= 1, sigma > 0, n >= 1")
    centers = mode_centers(spec)
    labels = rng.integers(0, spec.modes, size=spec.n)
    pts = centers[labels] + spec.sigma * rng.standard_normal((spec.n, 2))
    return Dataset(pts[:, None, None, :], labels)


def mode_centers(spec: SynthSpec):
    if spec.kind == "ring-mixture":
        angles = 2.0 * np.pi * np.arange(spec.modes) / spec.modes
        return np.stack([np.cos(angles), np.sin(angles)], axis=1)
    if spec.kind == "grid-mixture":
        side = int(np.ceil(np.sqrt(spec.modes)))
        ij = np.array([(i, j) for i in range(side) for j in range(side)][:spec.modes], dtype=np.float64)
        return ij - (side - 1) / 2.0
    raise ValueError(f"unknown synthetic kind {spec.kind!r}")


def save_points_csv(dataset, path):
    pts = dataset.images.reshape(len(dataset), -1)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["x", "y"] + (["label"] if dataset.labels is not None else []))
        for i, (x, y) in enumerate(pts):
            row = [repr(float(x)), repr(float(y))]
            if dataset.labels is not None:
                row.append(int(dataset.labels[i]))
            w.writerow(row)


def minibatches(dataset, N, rng):
    """One shuffled pass over ``dataset`` in batches of ``N``; the short tail is dropped."""
    n = len(dataset)
    if N > n:
        raise ValueError(f"batch size {N} exceeds dataset size {n}")
    order = rng.permutation(n)
    for start in range(0, n - N + 1, N):
        yield dataset.subset(order[start:start + N])


def mnist_5k_to_idx(out_dir, seed=0):
    """Write the 5,000-image MNIST sample bundled with ``mlxtend`` as IDX files.

    The bundled CSV is sorted by class, so rows are shuffled with a fixed
    seed; the file order of the IDX output is therefore class-balanced.
    Returns ``(images_path, labels_path)``.
    """
    spec = importlib.util.find_spec("mlxtend")
    if spec is None:
        raise FileNotFoundError("mlxtend is not installed; pip install mlxtend")
    src = os.path.join(spec.submodule_search_locations[0], "data", "data", "mnist_5k.csv.gz")
    with gzip.open(src, "rt") as fh:
        table = np.loadtxt(fh, delimiter=",")
    order = np.random.default_rng(seed).permutation(len(table))
    table = table[order]
    pixels = table[:, :-1].reshape(-1, 1, 28, 28) / 255.0
    ds = Dataset(pixels, table[:, -1].astype(np.int64))
    os.makedirs(out_dir, exist_ok=True)
    paths = (os.path.join(out_dir, "mnist5k-images-idx3-ubyte"),
             os.path.join(out_dir, "mnist5k-labels-idx1-ubyte"))
    write_idx(ds, *paths)
    return paths
