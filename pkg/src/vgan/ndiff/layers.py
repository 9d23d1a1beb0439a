"""Layer kernels with hand-written backward passes.

Every layer works on float64 batches whose leading axis is the sample axis.
Per-sample shapes (everything after the batch axis) are what ``output_shape``
validates, so a graph can check its wiring before seeing any data.
"""
from __future__ import annotations

import numpy as np
from scipy.special import expit


class ShapeError(ValueError):
    """Raised when a tensor does not match the shape a layer expects."""


def glorot_uniform(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape)


class Layer:
    kind = "layer"

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.buffers: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self._cache = None

    def output_shape(self, in_shape):
        return tuple(in_shape)

    def init(self, rng):
        """Draw initial parameters; layers without parameters ignore this."""

    def forward(self, x, train, rng=None, track_stats=True):
        raise NotImplementedError

    def backward(self, dy):
        raise NotImplementedError

    def clear(self):
        self._cache = None

    def __repr__(self):
        return f"{type(self).__name__}()"


class Dense(Layer):
    """Affine map ``y = W x + b`` with ``W`` of shape (out, in)."""

    kind = "dense"

    def __init__(self, n_in, n_out):
        super().__init__()
        self.n_in, self.n_out = n_in, n_out
        self.params = {"W": np.zeros((n_out, n_in)), "b": np.zeros(n_out)}

    def output_shape(self, in_shape):
        if tuple(in_shape) != (self.n_in,):
            raise ShapeError(f"dense expects ({self.n_in},), got {tuple(in_shape)}")
        return (self.n_out,)

    def init(self, rng):
        self.params["W"][...] = glorot_uniform(rng, (self.n_out, self.n_in), self.n_in, self.n_out)
        self.params["b"][...] = 0.0

    def forward(self, x, train, rng=None, track_stats=True):
        if train:
            self._cache = x
        return x @ self.params["W"].T + self.params["b"]

    def backward(self, dy):
        x = self._cache
        self.grads = {"W": dy.T @ x, "b": dy.sum(axis=0)}
        return dy @ self.params["W"]

    def __repr__(self):
        return f"Dense({self.n_in}, {self.n_out})"


def _im2col(xp, k, stride, h_out, w_out):
    """Gather ``(C, k, k, N, Ho, Wo)`` patches from a padded ``(N, C, Hp, Wp)`` batch.

    The layout keeps every kernel offset contiguous, so both the gather and
    the scatter in ``_col2im`` touch memory in order and the products below
    are single matrix multiplies.
    """
    n, c = xp.shape[:2]
    xt = xp.transpose(1, 0, 2, 3)
    cols = np.empty((c, k, k, n, h_out, w_out))
    for i in range(k):
        for j in range(k):
            cols[:, i, j] = xt[:, :, i:i + stride * (h_out - 1) + 1:stride, j:j + stride * (w_out - 1) + 1:stride]
    return cols


def _col2im(cols, hp, wp, stride):
    """Scatter-add ``(C, k, k, N, Ho, Wo)`` columns into an ``(N, C, hp, wp)`` array."""
    c, k, _, n, h_out, w_out = cols.shape
    buf = np.zeros((c, n, hp, wp))
    for i in range(k):
        for j in range(k):
            buf[:, :, i:i + stride * (h_out - 1) + 1:stride, j:j + stride * (w_out - 1) + 1:stride] += cols[:, i, j]
    return buf.transpose(1, 0, 2, 3)


def _channels_first(x):
    """``(N, C, H, W)`` -> ``(C, N*H*W)``."""
    return x.transpose(1, 0, 2, 3).reshape(x.shape[1], -1)


class Conv2d(Layer):
    """Stride-1 convolution with zero padding (``pad=k//2`` keeps the size)."""

    kind = "conv"

    def __init__(self, c_in, c_out, k=5, pad=None):
        super().__init__()
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.pad = k // 2 if pad is None else pad
        self.params = {"W": np.zeros((c_out, c_in, k, k)), "b": np.zeros(c_out)}

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ShapeError(f"conv expects ({self.c_in}, H, W), got {tuple(in_shape)}")
        _, h, w = in_shape
        h_out, w_out = h + 2 * self.pad - self.k + 1, w + 2 * self.pad - self.k + 1
        if h_out < 1 or w_out < 1:
            raise ShapeError(f"conv kernel {self.k} too large for {h}x{w}")
        return (self.c_out, h_out, w_out)

    def init(self, rng):
        fan_in, fan_out = self.c_in * self.k ** 2, self.c_out * self.k ** 2
        self.params["W"][...] = glorot_uniform(rng, self.params["W"].shape, fan_in, fan_out)
        self.params["b"][...] = 0.0

    def forward(self, x, train, rng=None, track_stats=True):
        p = self.pad
        xp = np.pad(x, ((0, 0), (0, 0), (p, p), (p, p))) if p else x
        n = len(x)
        h_out = xp.shape[2] - self.k + 1
        w_out = xp.shape[3] - self.k + 1
        cols = _im2col(xp, self.k, 1, h_out, w_out).reshape(-1, n * h_out * w_out)
        y = self.params["W"].reshape(self.c_out, -1) @ cols
        if train:
            self._cache = (xp.shape, cols)
        y = y.reshape(self.c_out, n, h_out, w_out).transpose(1, 0, 2, 3)
        return np.ascontiguousarray(y) + self.params["b"][:, None, None]

    def backward(self, dy):
        xp_shape, cols = self._cache
        n, _, h_out, w_out = dy.shape
        W = self.params["W"]
        dy2 = _channels_first(dy)
        self.grads = {"W": (dy2 @ cols.T).reshape(W.shape), "b": dy2.sum(axis=1)}
        dcols = (W.reshape(self.c_out, -1).T @ dy2).reshape(self.c_in, self.k, self.k, n, h_out, w_out)
        dxp = _col2im(dcols, xp_shape[2], xp_shape[3], 1)
        p = self.pad
        if p:
            dxp = dxp[:, :, p:-p, p:-p]
        return np.ascontiguousarray(dxp)

    def __repr__(self):
        return f"Conv2d({self.c_in}, {self.c_out}, k={self.k}, pad={self.pad})"


class ConvTranspose2d(Layer):
    """Transposed (fractionally strided) convolution; defaults double H and W."""

    kind = "deconv"

    def __init__(self, c_in, c_out, k=5, stride=2, pad=2, output_pad=1):
        super().__init__()
        if not 0 <= output_pad < stride:
            raise ValueError("output_pad must lie in [0, stride)")
        self.c_in, self.c_out, self.k = c_in, c_out, k
        self.stride, self.pad, self.output_pad = stride, pad, output_pad
        self.params = {"W": np.zeros((c_in, c_out, k, k)), "b": np.zeros(c_out)}

    def _out_size(self, n):
        return (n - 1) * self.stride - 2 * self.pad + self.k + self.output_pad

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[0] != self.c_in:
            raise ShapeError(f"deconv expects ({self.c_in}, H, W), got {tuple(in_shape)}")
        h_out, w_out = self._out_size(in_shape[1]), self._out_size(in_shape[2])
        if h_out < 1 or w_out < 1:
            raise ShapeError("deconv output would be empty")
        return (self.c_out, h_out, w_out)

    def init(self, rng):
        fan_in, fan_out = self.c_in * self.k ** 2, self.c_out * self.k ** 2
        self.params["W"][...] = glorot_uniform(rng, self.params["W"].shape, fan_in, fan_out)
        self.params["b"][...] = 0.0

    def _buffer_size(self, n):
        return (n - 1) * self.stride + self.k + self.output_pad

    def forward(self, x, train, rng=None, track_stats=True):
        n, _, h, w = x.shape
        s, p = self.stride, self.pad
        x2 = _channels_first(x)
        cols = (self.params["W"].reshape(self.c_in, -1).T @ x2).reshape(self.c_out, self.k, self.k, n, h, w)
        buf = _col2im(cols, self._buffer_size(h), self._buffer_size(w), s)
        h_out, w_out = self._out_size(h), self._out_size(w)
        if train:
            self._cache = (x.shape, x2)
        y = buf[:, :, p:p + h_out, p:p + w_out]
        return np.ascontiguousarray(y) + self.params["b"][:, None, None]

    def backward(self, dy):
        (n, _, h, w), x2 = self._cache
        p = self.pad
        dbuf = np.zeros((n, self.c_out, self._buffer_size(h), self._buffer_size(w)))
        dbuf[:, :, p:p + dy.shape[2], p:p + dy.shape[3]] = dy
        dcols = _im2col(dbuf, self.k, self.stride, h, w).reshape(-1, n * h * w)
        W = self.params["W"]
        self.grads = {"W": (x2 @ dcols.T).reshape(W.shape), "b": dy.sum(axis=(0, 2, 3))}
        dx = W.reshape(self.c_in, -1) @ dcols
        return np.ascontiguousarray(dx.reshape(self.c_in, n, h, w).transpose(1, 0, 2, 3))

    def __repr__(self):
        return f"ConvTranspose2d({self.c_in}, {self.c_out}, k={self.k}, stride={self.stride})"


class MaxPool2(Layer):
    """2x2 max pooling with stride 2; ties route the gradient to the first maximum."""

    kind = "pool"

    def output_shape(self, in_shape):
        if len(in_shape) != 3 or in_shape[1] % 2 or in_shape[2] % 2:
            raise ShapeError(f"pool expects (C, even H, even W), got {tuple(in_shape)}")
        c, h, w = in_shape
        return (c, h // 2, w // 2)

    def forward(self, x, train, rng=None, track_stats=True):
        n, c, h, w = x.shape
        blocks = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
        blocks = blocks.reshape(n, c, h // 2, w // 2, 4)
        idx = blocks.argmax(axis=-1)
        if train:
            self._cache = (x.shape, idx)
        return np.take_along_axis(blocks, idx[..., None], axis=-1)[..., 0]

    def backward(self, dy):
        shape, idx = self._cache
        n, c, h, w = shape
        dblocks = np.zeros((n, c, h // 2, w // 2, 4))
        np.put_along_axis(dblocks, idx[..., None], dy[..., None], axis=-1)
        dx = dblocks.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5)
        return dx.reshape(shape)


class ReLU(Layer):
    kind = "relu"

    def forward(self, x, train, rng=None, track_stats=True):
        mask = x > 0
        if train:
            self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy * self._cache


class Tanh(Layer):
    kind = "tanh"

    def forward(self, x, train, rng=None, track_stats=True):
        y = np.tanh(x)
        if train:
            self._cache = y
        return y

    def backward(self, dy):
        y = self._cache
        return dy * (1.0 - y * y)


class Sigmoid(Layer):
    kind = "sigmoid"

    def forward(self, x, train, rng=None, track_stats=True):
        y = expit(x)
        if train:
            self._cache = y
        return y

    def backward(self, dy):
        y = self._cache
        return dy * y * (1.0 - y)


class BatchNorm(Layer):
    """Batch normalization over the batch axis (and spatial axes for images).

    Running statistics live in ``buffers`` and are never touched by the
    optimizer; eval mode reads them and mutates nothing.
    """

    kind = "bn"

    def __init__(self, n_features, momentum=0.1, eps=1e-5):
        super().__init__()
        self.n_features, self.momentum, self.eps = n_features, momentum, eps
        self.params = {"gamma": np.ones(n_features), "beta": np.zeros(n_features)}
        self.buffers = {"running_mean": np.zeros(n_features), "running_var": np.ones(n_features)}

    def output_shape(self, in_shape):
        if in_shape[0] != self.n_features or len(in_shape) not in (1, 3):
            raise ShapeError(f"bn expects ({self.n_features},) or ({self.n_features}, H, W), got {tuple(in_shape)}")
        return tuple(in_shape)

    def init(self, rng):
        self.params["gamma"][...] = 1.0
        self.params["beta"][...] = 0.0
        self.buffers["running_mean"][...] = 0.0
        self.buffers["running_var"][...] = 1.0

    @staticmethod
    def _axes(x):
        return (0,) if x.ndim == 2 else (0, 2, 3)

    @staticmethod
    def _bcast(v, x):
        return v if x.ndim == 2 else v[:, None, None]

    def forward(self, x, train, rng=None, track_stats=True):
        g, b = self.params["gamma"], self.params["beta"]
        if not train:
            mean, var = self.buffers["running_mean"], self.buffers["running_var"]
            xhat = (x - self._bcast(mean, x)) / np.sqrt(self._bcast(var, x) + self.eps)
            return self._bcast(g, x) * xhat + self._bcast(b, x)
        axes = self._axes(x)
        mean = x.mean(axis=axes)
        var = x.var(axis=axes)
        inv_std = 1.0 / np.sqrt(var + self.eps)
        xhat = (x - self._bcast(mean, x)) * self._bcast(inv_std, x)
        if track_stats:
            m = x.size // self.n_features
            unbiased = var * m / (m - 1) if m > 1 else var
            self.buffers["running_mean"] *= 1.0 - self.momentum
            self.buffers["running_mean"] += self.momentum * mean
            self.buffers["running_var"] *= 1.0 - self.momentum
            self.buffers["running_var"] += self.momentum * unbiased
        self._cache = (xhat, inv_std)
        return self._bcast(g, x) * xhat + self._bcast(b, x)

    def backward(self, dy):
        xhat, inv_std = self._cache
        axes = self._axes(dy)
        m = dy.size // self.n_features
        self.grads = {"gamma": (dy * xhat).sum(axis=axes), "beta": dy.sum(axis=axes)}
        dxhat = dy * self._bcast(self.params["gamma"], dy)
        dx = (m * dxhat - dxhat.sum(axis=axes, keepdims=True)
              - xhat * (dxhat * xhat).sum(axis=axes, keepdims=True))
        return dx * self._bcast(inv_std, dy) / m


class Reshape(Layer):
    kind = "reshape"

    def __init__(self, shape):
        super().__init__()
        self.shape = tuple(shape)

    def output_shape(self, in_shape):
        if int(np.prod(in_shape)) != int(np.prod(self.shape)):
            raise ShapeError(f"cannot reshape {tuple(in_shape)} to {self.shape}")
        return self.shape

    def forward(self, x, train, rng=None, track_stats=True):
        if train:
            self._cache = x.shape
        return x.reshape((x.shape[0],) + self.shape)

    def backward(self, dy):
        return dy.reshape(self._cache)


class Flatten(Reshape):
    kind = "flatten"

    def __init__(self):
        super().__init__(())

    def output_shape(self, in_shape):
        self.shape = (int(np.prod(in_shape)),)
        return self.shape


class Dropout(Layer):
    """Inverted dropout; identity in eval mode."""

    kind = "dropout"

    def __init__(self, rate):
        super().__init__()
        if not 0.0 <= rate < 1.0:
            raise ValueError("dropout rate must lie in [0, 1)")
        self.rate = rate

    def forward(self, x, train, rng=None, track_stats=True):
        if not train or self.rate == 0.0:
            self._cache = None
            return x
        if rng is None:
            raise ValueError("dropout in train mode needs an rng")
        mask = (rng.random(x.shape) >= self.rate) / (1.0 - self.rate)
        self._cache = mask
        return x * mask

    def backward(self, dy):
        return dy if self._cache is None else dy * self._cache


class GaussianNoise(Layer):
    """Additive input noise, active only in train mode."""

    kind = "noise"

    def __init__(self, sigma):
        super().__init__()
        self.sigma = sigma

    def forward(self, x, train, rng=None, track_stats=True):
        if not train or self.sigma == 0.0:
            return x
        if rng is None:
            raise ValueError("gaussian noise in train mode needs an rng")
        return x + self.sigma * rng.standard_normal(x.shape)

    def backward(self, dy):
        return dy
