"""Sequential layer graphs with named parameters."""
from __future__ import annotations

import numpy as np

from .layers import Layer, ShapeError


class NonFiniteError(FloatingPointError):
    """A forward or backward pass produced NaN or Inf."""


class Graph:
    """An ordered stack of layers with a declared per-sample input shape.

    Parameters are addressed as ``"<index>.<kind>.<slot>"`` (for example
    ``"0.dense.W"``); running statistics of batch normalization use the same
    scheme but live in :meth:`buffers`, never in :meth:`parameters`.
    """

    def __init__(self, input_shape, layers=(), rng=None):
        self.input_shape = tuple(int(d) for d in input_shape)
        self.layers: list[Layer] = list(layers)
        shape = self.input_shape
        self.shapes = [shape]
        for i, layer in enumerate(self.layers):
            try:
                shape = tuple(layer.output_shape(shape))
            except ShapeError as exc:
                raise ShapeError(f"layer {i} ({layer.kind}): {exc}") from None
            self.shapes.append(shape)
        self.output_shape = shape
        self._ready = False
        if rng is not None:
            self.init(rng)

    def init(self, rng):
        for layer in self.layers:
            layer.init(rng)

    def _key(self, i, layer, slot):
        return f"{i}.{layer.kind}.{slot}"

    def parameters(self):
        """Live references to every learnable array, in layer order."""
        return {self._key(i, l, s): a for i, l in enumerate(self.layers) for s, a in l.params.items()}

    def buffers(self):
        return {self._key(i, l, s): a for i, l in enumerate(self.layers) for s, a in l.buffers.items()}

    def state(self):
        """Copies of parameters and buffers, suitable for checkpointing."""
        out = {k: v.copy() for k, v in self.parameters().items()}
        out.update({k: v.copy() for k, v in self.buffers().items()})
        return out

    def load_state(self, state, prefix=""):
        targets = dict(self.parameters())
        targets.update(self.buffers())
        for key, arr in targets.items():
            src = state[prefix + key]
            if src.shape != arr.shape:
                raise ShapeError(f"{prefix + key}: checkpoint shape {src.shape} != {arr.shape}")
            arr[...] = src

    def forward(self, x, mode="train", rng=None, track_stats=True):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[1:] != self.input_shape:
            raise ShapeError(f"graph expects (N, {', '.join(map(str, self.input_shape))}), got {x.shape}")
        if mode not in ("train", "eval"):
            raise ValueError(f"unknown mode {mode!r}")
        train = mode == "train"
        for layer in self.layers:
            x = layer.forward(x, train, rng=rng, track_stats=track_stats)
        if not np.all(np.isfinite(x)):
            raise NonFiniteError("non-finite activation in forward pass")
        self._ready = train
        return x

    __call__ = forward

    def backward(self, upstream):
        """Backpropagate ``upstream`` = dLoss/dOutput.

        Returns ``(grads, dx)``: the gradient of every parameter by name and
        the gradient with respect to the graph input.
        """
        if not self._ready:
            raise RuntimeError("backward needs a preceding forward pass in train mode")
        g = np.asarray(upstream, dtype=np.float64)
        grads = {}
        for i in range(len(self.layers) - 1, -1, -1):
            layer = self.layers[i]
            g = layer.backward(g)
            for slot, arr in layer.grads.items():
                grads[self._key(i, layer, slot)] = arr
        if not (np.all(np.isfinite(g)) and all(np.all(np.isfinite(a)) for a in grads.values())):
            raise NonFiniteError("non-finite gradient in backward pass")
        return {k: grads[k] for k in self.parameters() if k in grads}, g

    def n_params(self):
        return sum(a.size for a in self.parameters().values())

    def __repr__(self):
        inner = ", ".join(repr(l) for l in self.layers)
        return f"Graph({self.input_shape} -> {self.output_shape}: [{inner}])"
