"""Architecture builders shared by the energy, generator and classifier code."""
from __future__ import annotations

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


def parse_sizes(text):
    """``"64,64"`` -> ``[64, 64]``; an empty string gives no layers."""
    if isinstance(text, (list, tuple)):
        return [int(t) for t in text]
    return [int(t) for t in str(text).split(",") if t.strip()]


def _out_layer(kind):
    if kind == "sigmoid":
        return [Sigmoid()]
    if kind == "tanh":
        return [Tanh()]
    if kind == "relu":
        return [ReLU()]
    if kind == "linear":
        return []
    raise ValueError(f"unknown output nonlinearity {kind!r}")


def mlp(in_shape, hidden, out_dim, out="linear", batchnorm=False, out_shape=None, rng=None):
    """Flatten -> [Dense -> (BN) -> ReLU]* -> Dense -> out -> (Reshape)."""
    layers = [Flatten()] if len(in_shape) != 1 else []
    width = 1
    for d in in_shape:
        width *= d
    for h in hidden:
        layers.append(Dense(width, h))
        if batchnorm:
            layers.append(BatchNorm(h))
        layers.append(ReLU())
        width = h
    layers.append(Dense(width, out_dim))
    layers += _out_layer(out)
    if out_shape is not None:
        layers.append(Reshape(out_shape))
    return Graph(in_shape, layers, rng=rng)


def conv_features(in_shape, channels, d_out, out="relu", rng=None):
    """Two conv + two 2x2 max-pool stages followed by a dense layer."""
    c1, c2 = channels
    c, h, w = in_shape
    layers = [
        Conv2d(c, c1), ReLU(), MaxPool2(),
        Conv2d(c1, c2), ReLU(), MaxPool2(),
        Flatten(),
        Dense(c2 * (h // 4) * (w // 4), d_out),
    ]
    layers += _out_layer(out)
    return Graph(in_shape, layers, rng=rng)


def deconv_decoder(d_in, hidden, channels, out_shape, out="sigmoid", batchnorm=True, rng=None):
    """Dense -> Dense -> reshape -> two stride-2 transposed convolutions.

    ``channels`` is ``(c_hidden, c_mid)``: the reshaped feature map has
    ``c_hidden`` channels at a quarter of the output resolution.
    """
    c_hid, c_mid = channels
    c, h, w = out_shape
    if h % 4 or w % 4:
        raise ValueError("deconv decoder needs output sides divisible by 4")
    seed = c_hid * (h // 4) * (w // 4)
    layers = [Dense(d_in, hidden)]
    layers += [BatchNorm(hidden)] if batchnorm else []
    layers += [ReLU(), Dense(hidden, seed)]
    layers += [BatchNorm(seed)] if batchnorm else []
    layers += [ReLU(), Reshape((c_hid, h // 4, w // 4)), ConvTranspose2d(c_hid, c_mid)]
    layers += [BatchNorm(c_mid)] if batchnorm else []
    layers += [ReLU(), ConvTranspose2d(c_mid, c)]
    layers += _out_layer(out)
    return Graph((d_in,), layers, rng=rng)


def classifier_net(in_shape, channels, hidden, n_classes, dropout=0.5, noise=0.1, rng=None):
    """Input noise -> 2 conv/pool stages -> Dense+BN+ReLU+dropout -> logits."""
    c1, c2 = channels
    c, h, w = in_shape
    layers = [
        GaussianNoise(noise),
        Conv2d(c, c1), BatchNorm(c1), ReLU(), MaxPool2(),
        Conv2d(c1, c2), BatchNorm(c2), ReLU(), MaxPool2(),
        Flatten(),
        Dense(c2 * (h // 4) * (w // 4), hidden), BatchNorm(hidden), ReLU(), Dropout(dropout),
        Dense(hidden, n_classes),
    ]
    return Graph(in_shape, layers, rng=rng)
