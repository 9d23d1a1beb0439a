"""PNG tiling of image batches."""
from __future__ import annotations

import numpy as np
from PIL import Image


def tile(images, rows, cols=None):
    """Arrange ``(n, C, H, W)`` images row-major into a ``(rows*H, cols*W, C)`` uint8 array.

    Missing cells (``n < rows * cols``) stay black.
    """
    images = np.asarray(images, dtype=np.float64)
    n, c, h, w = images.shape
    if c not in (1, 3):
        raise ValueError(f"PNG tiles need 1 or 3 channels, got {c}")
    cols = cols or int(np.ceil(n / rows))
    if n > rows * cols:
        raise ValueError(f"{n} images do not fit a {rows}x{cols} grid")
    canvas = np.zeros((rows * h, cols * w, c), dtype=np.uint8)
    pix = np.rint(np.clip(images, 0.0, 1.0) * 255.0).astype(np.uint8).transpose(0, 2, 3, 1)
    for i in range(n):
        r, q = divmod(i, cols)
        canvas[r * h:(r + 1) * h, q * w:(q + 1) * w] = pix[i]
    return canvas


def save_grid(images, path, rows=10, cols=None):
    """Write an 8-bit grayscale (1 channel) or RGB (3 channels) PNG grid."""
    canvas = tile(images, rows, cols)
    img = Image.fromarray(canvas[:, :, 0], mode="L") if canvas.shape[2] == 1 else Image.fromarray(canvas, mode="RGB")
    img.save(path, format="PNG")
    return canvas.shape[:2]
