"""Noise-to-sample generators and the bottleneck-mixing transition operator."""
from __future__ import annotations

from typing import NamedTuple

import numpy as np

from .energy import batch_entropy_from_preact, poe_energy_from_preact
from .ndiff import Graph, ShapeError, Tanh

MASK_PROB = 0.5


def sample_noise(n, d, rng):
    """``n x d`` i.i.d. draws from Uniform[-1, 1]."""
    return rng.uniform(-1.0, 1.0, size=(n, d))


def sample_mask(n, d, rng):
    """``n x d`` Bernoulli(0.5) mask of 0.0/1.0 entries."""
    return (rng.random((n, d)) < MASK_PROB).astype(np.float64)


class DirectGenerator:
    """``G(z)``: a graph from the noise space to the data space."""

    def __init__(self, net: Graph):
        if len(net.input_shape) != 1:
            raise ShapeError("generator input must be a flat noise vector")
        self.net = net
        self.dz = net.input_shape[0]

    @property
    def output_shape(self):
        return self.net.output_shape

    def parameters(self):
        return {"net." + k: v for k, v in self.net.parameters().items()}

    def state(self):
        return {"net." + k: v for k, v in self.net.state().items()}

    def load_state(self, state, prefix=""):
        self.net.load_state(state, prefix + "net.")

    def generate(self, z, mode="train", track_stats=True):
        return self.net.forward(z, mode, track_stats=track_stats)

    def backward(self, dx):
        grads, _ = self.net.backward(dx)
        return {"net." + k: v for k, v in grads.items()}

    def sample(self, n, rng, mode="eval"):
        return self.generate(sample_noise(n, self.dz, rng), mode)


class Transition(NamedTuple):
    x_bar: np.ndarray
    x_tilde: np.ndarray
    h: np.ndarray
    h_tilde: np.ndarray
    m: np.ndarray
    z: np.ndarray


class TransitionGenerator:
    """Encoder/decoder pair defining ``p(x_tilde | x)``.

    One decoder produces both the reconstruction ``x_bar`` and the sample
    ``x_tilde``; both codes go through it as a single stacked batch, so the
    two outputs share parameters by construction.
    """

    def __init__(self, encoder: Graph, decoder: Graph):
        if not encoder.layers or not isinstance(encoder.layers[-1], Tanh):
            raise ShapeError("encoder must end in tanh so codes lie in (-1, 1)")
        if len(encoder.output_shape) != 1 or decoder.input_shape != encoder.output_shape:
            raise ShapeError("encoder output must match decoder input")
        if decoder.output_shape != encoder.input_shape:
            raise ShapeError("decoder must map back to the data shape")
        self.encoder, self.decoder = encoder, decoder
        self.d = encoder.output_shape[0]
        self._mask = None

    def parameters(self):
        out = {"enc." + k: v for k, v in self.encoder.parameters().items()}
        out.update({"dec." + k: v for k, v in self.decoder.parameters().items()})
        return out

    def state(self):
        out = {"enc." + k: v for k, v in self.encoder.state().items()}
        out.update({"dec." + k: v for k, v in self.decoder.state().items()})
        return out

    def load_state(self, state, prefix=""):
        self.encoder.load_state(state, prefix + "enc.")
        self.decoder.load_state(state, prefix + "dec.")

    def backward(self, d_xbar, d_xtilde):
        """Gradients of a loss given dL/dx_bar and dL/dx_tilde of the last train-mode sample."""
        m = self._mask
        dec_grads, dcodes = self.decoder.backward(np.concatenate([d_xbar, d_xtilde]))
        n = len(m)
        dh = dcodes[:n] + (1.0 - m) * dcodes[n:]
        enc_grads, _ = self.encoder.backward(dh)
        out = {"enc." + k: v for k, v in enc_grads.items()}
        out.update({"dec." + k: v for k, v in dec_grads.items()})
        return out


def transition_sample(g: TransitionGenerator, x, rng, mode="eval", track_stats=True, m=None, z=None):
    """Draw ``x_tilde ~ p(x_tilde | x)`` by mixing noise into the code.

    ``m`` ~ Bernoulli(0.5)^d is drawn first, then ``z`` ~ U[-1, 1]^d, unless
    either is supplied. Returns every intermediate as a :class:`Transition`.
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1:] != g.encoder.input_shape:
        raise ShapeError(f"transition expects (N, {g.encoder.input_shape}), got {x.shape}")
    n = len(x)
    if m is None:
        m = sample_mask(n, g.d, rng)
    if z is None:
        z = sample_noise(n, g.d, rng)
    h = g.encoder.forward(x, mode, track_stats=track_stats)
    h_tilde = m * z + (1.0 - m) * h
    out = g.decoder.forward(np.concatenate([h, h_tilde]), mode, track_stats=track_stats)
    g._mask = m
    return Transition(out[:n], out[n:], h, h_tilde, m, z)


def vcd_generator_loss(energy, g, x, rho, rng, entropy=True, track_stats=True):
    """``rho * (E[E(x_tilde)] - H~(p_g)) + (1 - rho) * MSE(x_bar, x)``.

    The entropy term is dropped when ``entropy`` is false. Energy parameters
    are treated as constants: their gradients are computed only to reach
    ``x_tilde`` and then discarded.
    Returns ``(loss, grads, stats)`` where ``grads`` covers the generator only.
    """
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    x = np.asarray(x, dtype=np.float64)
    tr = transition_sample(g, x, rng, mode="train", track_stats=track_stats)
    n = len(x)
    a = energy.preactivations(tr.x_tilde, "train")
    e, de = poe_energy_from_preact(a)
    h_g, dh_g = batch_entropy_from_preact(a)
    diff = tr.x_bar - x
    recon = float(np.mean(diff * diff))
    e_mean = float(e.mean())
    loss = rho * (e_mean - (h_g if entropy else 0.0)) + (1.0 - rho) * recon
    if rho > 0.0:
        d_a = rho * (de / n - (dh_g if entropy else 0.0))
        _, d_xtilde = energy.backward(d_a)
    else:
        d_xtilde = np.zeros_like(tr.x_tilde)
    d_xbar = (1.0 - rho) * 2.0 * diff / diff.size
    grads = g.backward(d_xbar, d_xtilde)
    stats = {"energy_gen": e_mean, "entropy_gen": h_g, "recon_mse": recon}
    return float(loss), grads, stats


def simulate_chain(g: TransitionGenerator, x0, steps, rng):
    """Run the transition operator ``steps`` times from ``x0`` (eval mode)."""
    if steps < 1:
        raise ValueError("steps must be >= 1")
    out, x = [], np.asarray(x0, dtype=np.float64)
    for _ in range(steps):
        x = transition_sample(g, x, rng).x_tilde
        out.append(x)
    return out
