"""Product-of-experts entropy energy, the -log D energy, and batch entropies.

All logarithms are natural, so a model with ``K`` experts has energies in
``[0, K ln 2]``.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit, xlogy

from .ndiff import Graph, ShapeError

LN2 = float(np.log(2.0))
CLAMP = 1e-7


def _softplus(a):
    return np.logaddexp(0.0, a)


def binary_entropy(p):
    """Entropy in nats of a Bernoulli(p); ``0 ln 0`` is taken as 0."""
    p = np.asarray(p, dtype=np.float64)
    if np.any((p < 0.0) | (p > 1.0)) or np.any(np.isnan(p)):
        raise ValueError("binary_entropy needs p in [0, 1]")
    h = -xlogy(p, p) - xlogy(1.0 - p, 1.0 - p)
    return float(h) if h.ndim == 0 else h


def binary_entropy_grad(p):
    """dH/dp, evaluated at p clamped to [1e-7, 1 - 1e-7] to stay finite."""
    p = np.clip(np.asarray(p, dtype=np.float64), CLAMP, 1.0 - CLAMP)
    return np.log1p(-p) - np.log(p)


def expert_entropy(a):
    """``H(sigmoid(a))`` and its derivative, computed directly from logits.

    Working in logit space keeps saturated experts at ~0 energy rather than at
    the floor a probability clamp would impose.
    """
    a = np.asarray(a, dtype=np.float64)
    p, q = expit(a), expit(-a)
    h = p * _softplus(-a) + q * _softplus(a)
    return h, -a * p * q


def poe_energy_from_preact(a):
    """Per-sample energy ``sum_j H(sigmoid(a_ij))`` and dE/da for (N, K) logits."""
    h, dh = expert_entropy(a)
    return h.sum(axis=1), dh


def batch_entropy_from_preact(a):
    """``sum_j H(mean_i sigmoid(a_ij))`` and its gradient with respect to ``a``."""
    a = np.asarray(a, dtype=np.float64)
    if a.shape[0] < 1:
        raise ValueError("batch entropy needs at least one sample")
    s = expit(a)
    mean = s.mean(axis=0)
    value = float(np.sum(binary_entropy(mean)))
    grad = binary_entropy_grad(mean)[None, :] * s * (1.0 - s) / a.shape[0]
    return value, grad


def gan_energy_from_logit(z):
    """``-log sigmoid(z)`` and its derivative."""
    z = np.asarray(z, dtype=np.float64)
    return _softplus(-z), -expit(-z)


class _HeadModel:
    """A feature graph ``phi`` followed by a linear read-out."""

    def __init__(self, phi: Graph):
        if len(phi.output_shape) != 1:
            raise ShapeError(f"phi must output a flat feature vector, got {phi.output_shape}")
        self.phi = phi
        self.d_phi = phi.output_shape[0]
        self.head: dict[str, np.ndarray] = {}
        self._feats = None

    @property
    def input_shape(self):
        return self.phi.input_shape

    def parameters(self):
        out = {"phi." + k: v for k, v in self.phi.parameters().items()}
        out.update({"head." + k: v for k, v in self.head.items()})
        return out

    def state(self):
        out = {"phi." + k: v for k, v in self.phi.state().items()}
        out.update({"head." + k: v.copy() for k, v in self.head.items()})
        return out

    def load_state(self, state, prefix=""):
        self.phi.load_state(state, prefix + "phi.")
        for k, v in self.head.items():
            v[...] = state[prefix + "head." + k]

    def _readout(self, feats):
        raise NotImplementedError

    def preactivations(self, x, mode="train"):
        feats = self.phi.forward(x, mode)
        self._feats = feats if mode == "train" else None
        return self._readout(feats)

    def backward(self, d_pre):
        """Backpropagate dLoss/d(pre-activations); returns ``(grads, dx)``."""
        if self._feats is None:
            raise RuntimeError("backward needs a preceding train-mode forward")
        head_grads, d_feats = self._readout_backward(self._feats, d_pre)
        phi_grads, dx = self.phi.backward(d_feats)
        grads = {"phi." + k: v for k, v in phi_grads.items()}
        grads.update({"head." + k: v for k, v in head_grads.items()})
        return grads, dx


class EnergyModel(_HeadModel):
    """Bounded multi-modal energy ``E(x) = sum_j H(sigmoid(W_j . phi(x) + b_j))``."""

    def __init__(self, phi: Graph, K: int, rng=None):
        super().__init__(phi)
        self.K = int(K)
        self.head = {"W": np.zeros((self.d_phi, self.K)), "b": np.zeros(self.K)}
        if rng is not None:
            self.init(rng)

    def init(self, rng):
        self.phi.init(rng)
        limit = np.sqrt(6.0 / (self.d_phi + self.K))
        self.head["W"][...] = rng.uniform(-limit, limit, size=(self.d_phi, self.K))
        self.head["b"][...] = 0.0

    def _readout(self, feats):
        return feats @ self.head["W"] + self.head["b"]

    def _readout_backward(self, feats, d_pre):
        grads = {"W": feats.T @ d_pre, "b": d_pre.sum(axis=0)}
        return grads, d_pre @ self.head["W"].T

    def energy(self, x, mode="eval"):
        return poe_energy_from_preact(self.preactivations(x, mode))[0]


class GanEnergyHead(_HeadModel):
    """Single sigmoid unit on top of ``phi``: ``E(x) = -log D(x)``."""

    def __init__(self, phi: Graph, rng=None):
        super().__init__(phi)
        self.head = {"w": np.zeros(self.d_phi), "b": np.zeros(1)}
        if rng is not None:
            self.init(rng)

    def init(self, rng):
        self.phi.init(rng)
        limit = np.sqrt(6.0 / (self.d_phi + 1))
        self.head["w"][...] = rng.uniform(-limit, limit, size=self.d_phi)
        self.head["b"][...] = 0.0

    def _readout(self, feats):
        return (feats @ self.head["w"] + self.head["b"][0])[:, None]

    def _readout_backward(self, feats, d_pre):
        d = d_pre[:, 0]
        grads = {"w": feats.T @ d, "b": np.array([d.sum()])}
        return grads, np.outer(d, self.head["w"])

    def discriminate(self, x, mode="eval"):
        return expit(self.preactivations(x, mode)[:, 0])

    def energy(self, x, mode="eval"):
        return gan_energy_from_logit(self.preactivations(x, mode)[:, 0])[0]


def poe_energy(model: EnergyModel, x):
    """Per-sample energies in ``[0, K ln 2]`` (eval mode)."""
    return model.energy(x, "eval")


def gan_energy(head: GanEnergyHead, x):
    return head.energy(x, "eval")


def entropy_approx(model: EnergyModel, batch):
    """Batch entropy proxy: sum over experts of H(mean activation)."""
    batch = np.asarray(batch, dtype=np.float64)
    if batch.shape[0] < 1:
        raise ValueError("entropy_approx needs a non-empty batch")
    return batch_entropy_from_preact(model.preactivations(batch, "eval"))[0]


data_entropy_reg = entropy_approx
