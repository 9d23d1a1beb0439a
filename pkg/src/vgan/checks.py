"""Gradient suite: every layer kind and both energy heads against finite differences."""
from __future__ import annotations

import numpy as np

from . import nets
from .energy import EnergyModel, GanEnergyHead, batch_entropy_from_preact, gan_energy_from_logit, poe_energy_from_preact
from .ndiff import (
    BatchNorm,
    Conv2d,
    ConvTranspose2d,
    Dense,
    Dropout,
    Flatten,
    GaussianNoise,
    Graph,
    MaxPool2,
    ReLU,
    Reshape,
    Sigmoid,
    Tanh,
)
from .ndiff.gradcheck import check_graph, max_relative_error, numeric_gradient

TOLERANCE = 1e-4


def layer_cases():
    """Small single-layer graphs (batch <= 4, dims <= 8) plus one mixed stack."""
    return {
        "dense": Graph((5,), [Dense(5, 3)]),
        "conv": Graph((2, 6, 6), [Conv2d(2, 3)]),
        "deconv": Graph((2, 3, 3), [ConvTranspose2d(2, 2)]),
        "maxpool": Graph((2, 4, 4), [MaxPool2()]),
        "relu": Graph((8,), [ReLU()]),
        "tanh": Graph((8,), [Tanh()]),
        "sigmoid": Graph((8,), [Sigmoid()]),
        "batchnorm": Graph((6,), [BatchNorm(6)]),
        "batchnorm2d": Graph((3, 2, 2), [BatchNorm(3)]),
        "reshape": Graph((2, 2, 2), [Flatten(), Reshape((2, 4))]),
        "dropout": Graph((8,), [Dropout(0.5)]),
        "noise": Graph((8,), [GaussianNoise(0.3)]),
        "stack": Graph((1, 8, 8), [Conv2d(1, 2), ReLU(), MaxPool2(), Flatten(), Dense(32, 6), Tanh(),
                                   Dense(6, 8), Tanh(), BatchNorm(8), Reshape((2, 2, 2)),
                                   ConvTranspose2d(2, 1), Sigmoid()]),
    }


def _randomise(graph, rng):
    graph.init(rng)
    for layer in graph.layers:
        if isinstance(layer, BatchNorm):
            layer.params["gamma"][...] = rng.uniform(0.5, 1.5, layer.n_features)
            layer.params["beta"][...] = rng.normal(size=layer.n_features)
        elif "b" in layer.params:
            # glorot weights keep activations out of saturation; biases get non-zero values
            layer.params["b"][...] = 0.1 * rng.normal(size=layer.params["b"].shape)


def check_head_model(model, x, kind, seed=0, step=1e-5):
    """Finite-difference check of a PoE (``kind="poe"``) or -log D (``"gan"``) energy."""
    r = np.random.default_rng(seed).standard_normal(len(x))

    def pieces():
        a = model.preactivations(x, "train")
        if kind == "poe":
            e, de = poe_energy_from_preact(a)
            h, dh = batch_entropy_from_preact(a)
            return float(r @ e + h), r[:, None] * de + dh
        e, de = gan_energy_from_logit(a[:, 0])
        return float(r @ e), (r * de)[:, None]

    def loss():
        return pieces()[0]

    _, d_a = pieces()
    grads, dx = model.backward(d_a)
    errors = {k: max_relative_error(grads[k], numeric_gradient(loss, p, step)) for k, p in model.parameters().items()}
    errors["input"] = max_relative_error(dx, numeric_gradient(loss, x, step))
    return errors


def gradient_suite(seed=0):
    """``{case: max relative error}`` over all layer kinds and both energy heads."""
    rng = np.random.default_rng(seed)
    out = {}
    for name, graph in layer_cases().items():
        _randomise(graph, rng)
        x = rng.normal(size=(3,) + graph.input_shape)
        out[name] = max(check_graph(graph, x, seed=seed).values())
    phi = nets.mlp((1, 1, 2), [6], 5, out="relu")
    poe = EnergyModel(phi, K=4, rng=rng)
    out["poe_energy_mlp"] = max(check_head_model(poe, rng.normal(size=(4, 1, 1, 2)), "poe", seed).values())
    phi = nets.conv_features((1, 8, 8), (2, 3), 6)
    poe = EnergyModel(phi, K=3, rng=rng)
    out["poe_energy_conv"] = max(check_head_model(poe, rng.uniform(size=(3, 1, 8, 8)), "poe", seed).values())
    gan = GanEnergyHead(nets.mlp((1, 1, 2), [6], 5, out="relu"), rng=rng)
    out["gan_energy"] = max(check_head_model(gan, rng.normal(size=(4, 1, 1, 2)), "gan", seed).values())
    return out
