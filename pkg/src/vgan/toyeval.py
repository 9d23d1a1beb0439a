"""Exact NLL for 1D/2D (or finite) energies and the Jensen lower bound.

Energies are passed either as a model with an ``energy(x)`` method (points
are reshaped to the model's input shape) or as a plain callable mapping an
``(M, dims)`` array to ``M`` energies.
"""
from __future__ import annotations

import csv
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.special import logsumexp

COARSE_TOL = 1e-3


class CoarseGridWarning(UserWarning):
    pass


@dataclass(frozen=True)
class QuadratureGrid:
    """Tensor-product trapezoid grid on a 1D interval or 2D box."""

    lo: tuple
    hi: tuple
    points: int = 256

    def __post_init__(self):
        lo, hi = np.atleast_1d(self.lo), np.atleast_1d(self.hi)
        object.__setattr__(self, "lo", tuple(float(v) for v in lo))
        object.__setattr__(self, "hi", tuple(float(v) for v in hi))
        if len(self.lo) != len(self.hi) or len(self.lo) not in (1, 2):
            raise ValueError("grid must be 1D or 2D")
        if any(a >= b for a, b in zip(self.lo, self.hi)):
            raise ValueError("grid needs lo < hi")
        if self.points < 16:
            raise ValueError("grid needs at least 16 points per dimension")

    @property
    def dims(self):
        return len(self.lo)

    @property
    def volume(self):
        return float(np.prod(np.subtract(self.hi, self.lo)))

    def nodes(self):
        """``(points, log_weights)`` for the trapezoid rule."""
        axes, logw = [], []
        for a, b in zip(self.lo, self.hi):
            x = np.linspace(a, b, self.points)
            w = np.full(self.points, (b - a) / (self.points - 1))
            w[[0, -1]] *= 0.5
            axes.append(x)
            logw.append(np.log(w))
        mesh = np.meshgrid(*axes, indexing="ij")
        pts = np.stack([m.reshape(-1) for m in mesh], axis=1)
        lw = np.add.reduce(np.meshgrid(*logw, indexing="ij")).reshape(-1) if self.dims > 1 else logw[0]
        return pts, lw

    def refined(self):
        return QuadratureGrid(self.lo, self.hi, 2 * self.points - 1)

    def contains(self, pts, tol=1e-12):
        pts = np.asarray(pts, dtype=np.float64).reshape(len(pts), -1)
        return bool(np.all(pts >= np.array(self.lo) - tol) and np.all(pts <= np.array(self.hi) + tol))


@dataclass(frozen=True)
class DiscreteSpace:
    """A finite state space with counting measure."""

    states: np.ndarray = field(default_factory=lambda: np.zeros((0, 1)))

    def nodes(self):
        s = np.asarray(self.states, dtype=np.float64)
        s = s.reshape(len(s), -1)
        return s, np.zeros(len(s))


def energy_fn(energy):
    """Normalise a model or callable to ``f((M, dims)) -> (M,)``."""
    if hasattr(energy, "energy"):
        shape = energy.input_shape

        def f(pts):
            return energy.energy(np.asarray(pts).reshape((len(pts),) + shape))
        return f
    return lambda pts: np.asarray(energy(np.asarray(pts)), dtype=np.float64).reshape(-1)


def _log_partition(f, space):
    pts, logw = space.nodes()
    return float(logsumexp(-f(pts) + logw))


def exact_log_partition(energy, space, check=True):
    """``log`` of the integral (or sum) of ``exp(-E)`` over the space.

    For a grid, also evaluates at doubled resolution and emits a
    :class:`CoarseGridWarning` when the two disagree by more than 1e-3.
    """
    f = energy_fn(energy)
    log_z = _log_partition(f, space)
    if check and isinstance(space, QuadratureGrid):
        fine = _log_partition(f, space.refined())
        if abs(fine - log_z) > COARSE_TOL:
            warnings.warn(f"grid too coarse: log Z moved by {abs(fine - log_z):.2e} on refinement",
                          CoarseGridWarning, stacklevel=2)
    return log_z


def _points(data):
    if hasattr(data, "images"):
        data = data.images
    data = np.asarray(data, dtype=np.float64)
    return data.reshape(len(data), -1)


def exact_nll(energy, data, space, check=True):
    """Mean data energy plus the exact log partition function."""
    pts = _points(data)
    if isinstance(space, QuadratureGrid) and not space.contains(pts):
        raise ValueError("data lie outside the quadrature grid")
    f = energy_fn(energy)
    return float(np.mean(f(pts))) + exact_log_partition(energy, space, check=check)


@dataclass
class BoundReport:
    data_term: float
    q_term: float
    entropy: float
    bound: float
    exact_nll: float
    gap: float
    q_stderr: float

    def tolerance(self):
        """Three Monte-Carlo standard errors of the sampled ``q`` term."""
        return 3.0 * self.q_stderr

    def to_row(self):
        return asdict(self)


def bound_value(energy, data, q_samples, q_entropy, space, check=True):
    """Three-term lower bound ``E_data[E] - E_q[E] + H(q)`` next to the exact NLL."""
    q_pts = _points(q_samples)
    if len(q_pts) == 0:
        raise ValueError("bound_value needs at least one q sample")
    f = energy_fn(energy)
    data_term = float(np.mean(f(_points(data))))
    eq = f(q_pts)
    q_term = float(np.mean(eq))
    stderr = float(np.std(eq, ddof=1) / np.sqrt(len(eq))) if len(eq) > 1 else float("inf")
    bound = data_term - q_term + float(q_entropy)
    nll = data_term + exact_log_partition(energy, space, check=check)
    return BoundReport(data_term, q_term, float(q_entropy), bound, nll, nll - bound, stderr)


def write_bound_reports(rows, path):
    """``rows`` is an iterable of ``(label, BoundReport)`` pairs."""
    rows = list(rows)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        keys = list(BoundReport.__dataclass_fields__)
        w.writerow(["q"] + keys)
        for label, rep in rows:
            w.writerow([label] + [repr(float(getattr(rep, k))) for k in keys])


@dataclass
class ModeCoverage:
    fractions: np.ndarray
    unassigned: float

    def covered(self, min_mass=0.02):
        """Number of modes holding at least ``min_mass`` of the samples."""
        return int(np.sum(self.fractions >= min_mass))


def mode_coverage(samples, centers, radius):
    """Fraction of samples within ``radius`` of each centre (nearest centre wins)."""
    if radius <= 0:
        raise ValueError("radius must be positive")
    pts = _points(samples)
    centers = np.asarray(centers, dtype=np.float64).reshape(len(centers), -1)
    d = np.linalg.norm(pts[:, None, :] - centers[None, :, :], axis=2)
    nearest = d.argmin(axis=1)
    hit = d[np.arange(len(pts)), nearest] <= radius
    counts = np.bincount(nearest[hit], minlength=len(centers)).astype(np.float64)
    n = max(len(pts), 1)
    return ModeCoverage(counts / n, float(1.0 - hit.sum() / n))
