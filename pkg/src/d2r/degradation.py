"""Acquisition noise, axial downsampling and Stage-I training pair synthesis."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .interp import upsample_axis_to
from .volume import Plane, SliceImage, Volume, get_slice


@dataclass(frozen=True)
class NoiseParams:
    """Poisson scale ``alpha`` and Gaussian std ``sigma`` in [0, 1] intensity units."""

    alpha: float = 0.0
    sigma: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0 or self.sigma < 0:
            raise ValueError("alpha and sigma must be nonnegative")

    @property
    def is_zero(self) -> bool:
        return self.alpha == 0 and self.sigma == 0


@dataclass(frozen=True)
class DegradationConfig:
    r: int = 8
    keep_phase: int = 0
    noise: NoiseParams = field(default_factory=NoiseParams)
    # add noise to the degraded Stage-I inputs as well
    noisy_inputs: bool = True

    def __post_init__(self):
        if int(self.r) != self.r or self.r < 2:
            raise ValueError(f"scale factor r must be an integer >= 2, got {self.r}")
        if not 0 <= self.keep_phase < self.r:
            raise ValueError(f"keep_phase must lie in [0, {self.r}), got {self.keep_phase}")

    def kept_indices(self, n: int) -> np.ndarray:
        return np.arange(self.keep_phase, n, self.r)


def _unwrap(x):
    if isinstance(x, Volume):
        return x.data, lambda d: x.replace(data=d)
    if isinstance(x, SliceImage):
        return x.data, lambda d: SliceImage(d, x.source_plane, x.source_index)
    return np.asarray(x), lambda d: d


def add_poisson_gaussian_noise(x, p: NoiseParams):
    """y = alpha * Poisson(x / alpha) + N(0, sigma^2), clamped to [0, 1]."""
    data, wrap = _unwrap(x)
    if p.is_zero:
        return x
    rng = np.random.default_rng(p.seed)
    clean = data.astype(np.float64)
    if p.alpha > 0:
        y = p.alpha * rng.poisson(clean / p.alpha)
    else:
        y = clean.copy()
    if p.sigma > 0:
        y = y + rng.normal(0.0, p.sigma, size=clean.shape)
    return wrap(np.clip(y, 0.0, 1.0).astype(np.float32))


def approx_gaussian_noise(x, p: NoiseParams):
    """Signal-dependent Gaussian surrogate: y = x + N(0, alpha*x + sigma^2), clamped."""
    data, wrap = _unwrap(x)
    if p.is_zero:
        return x
    rng = np.random.default_rng(p.seed)
    clean = data.astype(np.float64)
    std = np.sqrt(p.alpha * clean + p.sigma ** 2)
    y = clean + std * rng.standard_normal(clean.shape)
    return wrap(np.clip(y, 0.0, 1.0).astype(np.float32))


def downsample_discard(v: Volume, cfg: DegradationConfig) -> Volume:
    """Keep axial slices keep_phase + k*r and drop the rest."""
    keep = cfg.kept_indices(v.shape[0])
    if len(keep) < 2:
        raise ValueError(f"axial extent {v.shape[0]} keeps {len(keep)} slice(s) at r={cfg.r}; need >= 2")
    z, y, x = v.voxel_size_nm
    return Volume(v.data[keep], (z * cfg.r, y, x))


def downsample_mean(v: Volume, r: int) -> Volume:
    """Average consecutive groups of r axial slices."""
    if r < 1:
        raise ValueError("r must be positive")
    n = v.shape[0]
    if n % r:
        raise ValueError(f"axial extent {n} is not divisible by r={r}")
    data = v.data.astype(np.float64).reshape(n // r, r, *v.shape[1:]).mean(axis=1)
    z, y, x = v.voxel_size_nm
    return Volume(data.astype(np.float32), (z * r, y, x))


def degrade_slice_rows(img: SliceImage, r: int, phase: int = 0) -> SliceImage:
    """2D analogue of :func:`downsample_discard` acting on image rows."""
    if r < 2 or not 0 <= phase < r:
        raise ValueError(f"need r >= 2 and 0 <= phase < r, got r={r}, phase={phase}")
    rows = np.arange(phase, img.height, r)
    if len(rows) < 2:
        raise ValueError(f"{img.height} rows keep {len(rows)} at r={r}; need >= 2")
    return SliceImage(img.data[rows], img.source_plane, img.source_index)


def upsample_rows(img: SliceImage | np.ndarray, r: int, height: int | None = None) -> np.ndarray:
    """Bicubic row upsampling; kept row k lands on output row k*r.

    ``height`` defaults to the interior-gap convention r*(H-1)+1.
    """
    data = img.data if isinstance(img, SliceImage) else np.asarray(img)
    if height is None:
        height = r * (data.shape[0] - 1) + 1
    return np.clip(upsample_axis_to(data, 0, r, height), 0.0, 1.0).astype(np.float32)


def make_stage1_pairs(v: Volume, cfg: DegradationConfig, n_pairs: int,
                      patch_hw: tuple[int, int], seed: int):
    """Random (degraded, clean) XY patch pairs, both of size ``patch_hw``.

    The degraded patch is the clean patch with rows discarded at phase 0,
    optionally noised, then bicubic-upsampled back to the patch height.
    """
    h, w = patch_hw
    z, ny, nx = v.shape
    if h > ny or w > nx:
        raise ValueError(f"patch {patch_hw} larger than XY slice {(ny, nx)}")
    if n_pairs < 0:
        raise ValueError("n_pairs must be nonnegative")
    rng = np.random.default_rng(seed)
    pairs = []
    for _ in range(n_pairs):
        i = int(rng.integers(z))
        sl = v.data[i]
        # XY slices have no preferred orientation; degrade along either in-plane axis
        if rng.random() < 0.5 and h <= nx and w <= ny:
            sl = sl.T
        r0 = int(rng.integers(sl.shape[0] - h + 1))
        c0 = int(rng.integers(sl.shape[1] - w + 1))
        clean = SliceImage(sl[r0:r0 + h, c0:c0 + w], Plane.XY, i)
        low = degrade_slice_rows(clean, cfg.r, 0)
        if cfg.noisy_inputs and not cfg.noise.is_zero:
            low = approx_gaussian_noise(low, NoiseParams(cfg.noise.alpha, cfg.noise.sigma,
                                                         int(rng.integers(2 ** 31))))
        degraded = SliceImage(upsample_rows(low, cfg.r, h), Plane.XY, i)
        pairs.append((degraded, clean))
    return pairs
