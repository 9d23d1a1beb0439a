"""Central finite-difference checks for analytic gradients."""
from __future__ import annotations

import numpy as np


def max_relative_error(analytic, numeric, floor=1e-6):
    """Largest elementwise ``|a - n| / max(|a|, |n|, floor)``."""
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0


def numeric_gradient(f, arr, step=1e-5):
    """d f() / d arr by central differences, perturbing ``arr`` in place."""
    grad = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return grad


def check_graph(graph, x, seed=0, step=1e-5, weights=None):
    """Compare ``graph.backward`` against finite differences.

    The scalar probed is ``sum(weights * graph(x))`` with random weights, so
    every output coordinate contributes. Stochastic layers get a freshly
    seeded rng per evaluation, which keeps the probe deterministic.
    Returns ``{name: max relative error}`` including the key ``"input"``.
    """
    x = np.array(x, dtype=np.float64)
    if weights is None:
        weights = np.random.default_rng(seed + 1).standard_normal((x.shape[0],) + graph.output_shape)

    def loss():
        out = graph.forward(x, "train", rng=np.random.default_rng(seed), track_stats=False)
        return float(np.sum(out * weights))

    loss()
    grads, dx = graph.backward(weights)
    errors = {}
    for name, p in graph.parameters().items():
        errors[name] = max_relative_error(grads[name], numeric_gradient(loss, p, step))
    errors["input"] = max_relative_error(dx, numeric_gradient(loss, x, step))
    return errors
