"""Separable cubic-convolution resampling (a = -0.5, 4 taps, reflect boundary)."""

from __future__ import annotations

from functools import lru_cache

import numpy as np

A = -0.5


def cubic_kernel(x, a: float = A):
    """Keys cubic convolution kernel."""
    x = np.abs(np.asarray(x, dtype=np.float64))
    x2, x3 = x * x, x * x * x
    near = (a + 2) * x3 - (a + 3) * x2 + 1
    far = a * x3 - 5 * a * x2 + 8 * a * x - 4 * a
    return np.where(x <= 1, near, np.where(x < 2, far, 0.0))


def _reflect(idx: np.ndarray, n: int) -> np.ndarray:
    if n == 1:
        return np.zeros_like(idx)
    period = 2 * (n - 1)
    idx = np.mod(idx, period)
    return np.where(idx >= n, period - idx, idx)


@lru_cache(maxsize=64)
def _matrix(n_in: int, n_out: int) -> np.ndarray:
    # pixel-centre alignment: out pixel j samples input coordinate (j + .5) * n_in / n_out - .5
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    base = np.floor(src).astype(np.int64)
    m = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    for tap in range(-1, 3):
        idx = base + tap
        w = cubic_kernel(src - idx)
        np.add.at(m, (rows, _reflect(idx, n_in)), w)
    m.setflags(write=False)
    return m


def resample_matrix(n_in: int, n_out: int) -> np.ndarray:
    """(n_out, n_in) matrix of the 1-D resampling operator."""
    if n_in < 1 or n_out < 1:
        raise ValueError(f"resample sizes must be >= 1, got {n_in} -> {n_out}")
    return _matrix(int(n_in), int(n_out))


def bicubic_resample(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Resize the two leading spatial axes of ``img`` ((H, W) or (H, W, C))."""
    if out_h < 1 or out_w < 1:
        raise ValueError(f"output size must be >= 1, got {out_h}x{out_w}")
    img = np.asarray(img)
    dtype = img.dtype if np.issubdtype(img.dtype, np.floating) else np.float64
    rows = resample_matrix(img.shape[0], out_h)
    cols = resample_matrix(img.shape[1], out_w)
    out = np.tensordot(rows, img, axes=(1, 0))
    out = np.moveaxis(np.tensordot(cols, out, axes=(1, 1)), 0, 1)
    return out.astype(dtype)
