"""Catmull-Rom cubic interpolation along one array axis.

Ghost samples beyond each end are linearly extrapolated, so affine signals are
reproduced exactly up to the boundary. Query coordinates are clamped to the
sampled range; nothing is extrapolated past the first or last sample.
"""

from __future__ import annotations

import numpy as np
import torch


def catmull_rom_weights(t):
    """Weights of the four taps (p[i-1], p[i], p[i+1], p[i+2]) at offset t in [0, 1].

    Works elementwise for floats, numpy arrays and torch tensors.
    """
    t2 = t * t
    t3 = t2 * t
    w0 = 0.5 * (-t + 2 * t2 - t3)
    w1 = 0.5 * (2 - 5 * t2 + 3 * t3)
    w2 = 0.5 * (t + 4 * t2 - 3 * t3)
    w3 = 0.5 * (-t2 + t3)
    return w0, w1, w2, w3


def _pad_linear(a: np.ndarray, axis: int) -> np.ndarray:
    a = np.moveaxis(a, axis, 0)
    lo = 2 * a[0] - a[1]
    hi = 2 * a[-1] - a[-2]
    out = np.concatenate([lo[None], a, hi[None]], axis=0)
    return np.moveaxis(out, 0, axis)


def cubic_resample(a: np.ndarray, axis: int, positions) -> np.ndarray:
    """Evaluate the cubic interpolant of ``a`` along ``axis`` at fractional ``positions``.

    Computation happens in float64; the result keeps ``a``'s float dtype.
    """
    a = np.asarray(a)
    n = a.shape[axis]
    if n < 2:
        raise ValueError(f"need at least 2 samples along axis {axis}, got {n}")
    x = np.clip(np.asarray(positions, dtype=np.float64), 0.0, n - 1)
    i = np.clip(np.floor(x).astype(np.int64), 0, n - 2)
    t = x - i
    padded = _pad_linear(a.astype(np.float64), axis)
    # padded index k+1 holds original sample k
    taps = [np.take(padded, i + k, axis=axis) for k in range(4)]
    shape = [1] * a.ndim
    shape[axis] = len(x)
    w = [np.reshape(wk, shape) for wk in catmull_rom_weights(t)]
    out = sum(wk * tk for wk, tk in zip(w, taps))
    dtype = a.dtype if np.issubdtype(a.dtype, np.floating) else np.float64
    return out.astype(dtype, copy=False)


def gap_positions(n: int, r: int) -> np.ndarray:
    """Sample coordinates of the r(n-1)+1 output grid; sample k sits at k*r."""
    return np.arange(r * (n - 1) + 1, dtype=np.float64) / r


def upsample_axis(a: np.ndarray, axis: int, r: int) -> np.ndarray:
    """Cubic upsampling by ``r`` keeping the original samples at indices k*r."""
    return cubic_resample(a, axis, gap_positions(a.shape[axis], r))


def upsample_axis_to(a: np.ndarray, axis: int, r: int, length: int) -> np.ndarray:
    """Like :func:`upsample_axis` but with an explicit output length (edge-clamped)."""
    return cubic_resample(a, axis, np.arange(length, dtype=np.float64) / r)


def window_interp(window: torch.Tensor, d) -> torch.Tensor:
    """Interpolate between the two central slices of a ``(B, 2n, H, W)`` window.

    ``d`` is the relative depth in (0, 1), scalar or shape ``(B,)``. Windows of
    two slices fall back to linear interpolation.
    """
    b, m = window.shape[:2]
    d = torch.as_tensor(d, dtype=window.dtype, device=window.device)
    if d.ndim == 0:
        d = d.expand(b)
    d = d.view(b, 1, 1)
    n = m // 2
    if m == 2:
        return (1 - d) * window[:, 0] + d * window[:, 1]
    w0, w1, w2, w3 = catmull_rom_weights(d)
    return (w0 * window[:, n - 2] + w1 * window[:, n - 1]
            + w2 * window[:, n] + w3 * window[:, n + 1])
