"""Dense float64 array helpers used by the layer equations.

"Convolution" in this package always means the sliding dot product
``out[m] = sum_k k[k] * x[m + k]`` (no kernel flip). The flipped kernel only
shows up in :func:`full_corr_flipped`, which is the adjoint used to push
gradients back through a valid correlation.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


class ShapeError(ValueError):
    """Raised when array dimensions do not compose."""


def as_vec(x) -> np.ndarray:
    v = np.asarray(x, dtype=np.float64)
    if v.ndim != 1 or v.size < 1:
        raise ShapeError(f"expected a non-empty 1-D array, got shape {v.shape}")
    return v


def as_mat(x) -> np.ndarray:
    a = np.asarray(x, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] < 1 or a.shape[1] < 1:
        raise ShapeError(f"expected a non-empty 2-D array, got shape {a.shape}")
    return a


def valid_corr(x, k) -> np.ndarray:
    """Valid-mode sliding dot product, length ``len(x) - len(k) + 1``."""
    x = as_vec(x)
    k = as_vec(k)
    if k.size > x.size:
        raise ShapeError(f"kernel length {k.size} exceeds signal length {x.size}")
    return sliding_window_view(x, k.size) @ k


def full_corr_flipped(g, k) -> np.ndarray:
    """Slide the reversed kernel over ``g`` zero-padded by ``K - 1`` on each side.

    This is the adjoint of :func:`valid_corr` in its signal argument:
    ``<valid_corr(x, k), g> == <x, full_corr_flipped(g, k)>``.
    """
    g = as_vec(g)
    k = as_vec(k)
    padded = np.pad(g, (k.size - 1, k.size - 1))
    return valid_corr(padded, k[::-1])


def hadamard_pow(y, d: int) -> np.ndarray:
    if int(d) != d or d < 1:
        raise ValueError(f"degree must be a positive integer, got {d}")
    return np.asarray(y, dtype=np.float64) ** int(d)


def power_stack(y: np.ndarray, degree: int) -> np.ndarray:
    """Stack ``y, y**2, ..., y**degree`` along a new axis placed before the last.

    ``(..., M)`` becomes ``(..., degree, M)``. Powers are built by repeated
    multiplication so every entry is computed once per layer.
    """
    out = np.empty(y.shape[:-1] + (degree, y.shape[-1]), dtype=np.float64)
    out[..., 0, :] = y
    for d in range(1, degree):
        np.multiply(out[..., d - 1, :], y, out=out[..., d, :])
    return out


def windows(x: np.ndarray, k: int) -> np.ndarray:
    """Read-only view ``(..., M - k + 1, k)`` of every length-``k`` slice of the last axis."""
    if k > x.shape[-1]:
        raise ShapeError(f"kernel length {k} exceeds signal length {x.shape[-1]}")
    return sliding_window_view(x, k, axis=-1)


def same_pad_widths(k: int) -> tuple[int, int]:
    """Zero padding that keeps the length under a length-``k`` valid correlation.

    The deficit ``k - 1`` is split evenly; an odd leftover goes to the right.
    """
    total = k - 1
    left = total // 2
    return left, total - left


def maxpool2(y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Max over non-overlapping pairs of the last axis. Returns (values, argmax in {0,1}).

    A trailing odd sample is dropped. Ties pick the first element.
    """
    half = y.shape[-1] // 2
    if half < 1:
        raise ShapeError("maxpool2 needs at least 2 samples")
    pairs = y[..., : 2 * half].reshape(y.shape[:-1] + (half, 2))
    arg = np.argmax(pairs, axis=-1)
    vals = np.take_along_axis(pairs, arg[..., None], axis=-1)[..., 0]
    return vals, arg


def maxpool2_backward(g: np.ndarray, arg: np.ndarray, length: int) -> np.ndarray:
    half = g.shape[-1]
    pairs = np.zeros(g.shape[:-1] + (half, 2))
    np.put_along_axis(pairs, arg[..., None], g[..., None], axis=-1)
    out = np.zeros(g.shape[:-1] + (length,))
    out[..., : 2 * half] = pairs.reshape(g.shape[:-1] + (2 * half,))
    return out


def repeat2(y: np.ndarray) -> np.ndarray:
    return np.repeat(y, 2, axis=-1)


def repeat2_backward(g: np.ndarray) -> np.ndarray:
    return g.reshape(g.shape[:-1] + (g.shape[-1] // 2, 2)).sum(axis=-1)
