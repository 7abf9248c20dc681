"""Volumes, tri-plane slicing, raw file I/O and procedural phantoms."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import ndimage
from scipy.spatial.transform import Rotation

log = logging.getLogger(__name__)


class VolumeFormatError(ValueError):
    """Raised for malformed volume files or sidecars."""


class Plane(enum.Enum):
    """Slice planes; the value is the volume axis the plane is normal to."""

    XY = 0
    XZ = 1
    YZ = 2

    @property
    def axis(self) -> int:
        return self.value


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float32)
    a.flags.writeable = False
    return a


def _check_intensities(data: np.ndarray, what: str) -> None:
    if not np.all(np.isfinite(data)):
        raise ValueError(f"{what} contains non-finite values")
    if data.size and (data.min() < 0.0 or data.max() > 1.0):
        raise ValueError(f"{what} intensities must lie in [0, 1]")


@dataclass(frozen=True, eq=False)
class Volume:
    """Immutable (Z, Y, X) float32 intensity grid in [0, 1] with voxel size in nm."""

    data: np.ndarray
    voxel_size_nm: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 3 or min(data.shape) < 1:
            raise ValueError(f"volume must be a non-empty 3D array, got shape {data.shape}")
        _check_intensities(data, "volume")
        vs = tuple(float(v) for v in self.voxel_size_nm)
        if len(vs) != 3 or not all(v > 0 and np.isfinite(v) for v in vs):
            raise ValueError(f"voxel_size_nm must be 3 positive reals, got {self.voxel_size_nm}")
        object.__setattr__(self, "data", _readonly(data))
        object.__setattr__(self, "voxel_size_nm", vs)

    @property
    def shape(self) -> tuple[int, int, int]:
        return self.data.shape

    def replace(self, data=None, voxel_size_nm=None) -> "Volume":
        return Volume(self.data if data is None else data,
                      self.voxel_size_nm if voxel_size_nm is None else voxel_size_nm)


@dataclass(frozen=True, eq=False)
class SliceImage:
    """2D slice in [0, 1]; rows are Z for XZ/YZ slices."""

    data: np.ndarray
    source_plane: Plane = Plane.XY
    source_index: int = 0

    def __post_init__(self):
        data = np.asarray(self.data)
        if data.ndim != 2 or min(data.shape) < 1:
            raise ValueError(f"slice must be a non-empty 2D array, got shape {data.shape}")
        _check_intensities(data, "slice")
        if self.source_index < 0:
            raise ValueError("source_index must be nonnegative")
        object.__setattr__(self, "data", _readonly(data))

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]


def get_slice(v: Volume, plane: Plane, index: int) -> SliceImage:
    n = v.shape[plane.axis]
    if not 0 <= index < n:
        raise IndexError(f"{plane.name} index {index} out of range [0, {n})")
    data = np.take(v.data, index, axis=plane.axis)
    return SliceImage(data, plane, index)


def iter_slices(v: Volume, plane: Plane):
    for i in range(v.shape[plane.axis]):
        yield get_slice(v, plane, i)


def concat_slices(plane: Plane, slices: Sequence[SliceImage],
                  voxel_size_nm=(1.0, 1.0, 1.0)) -> Volume:
    """Stack slices along the plane's normal axis; inverse of :func:`get_slice`."""
    if len(slices) == 0:
        raise ValueError("cannot assemble a volume from zero slices")
    dims = {s.data.shape for s in slices}
    if len(dims) != 1:
        raise ValueError(f"inconsistent slice dimensions: {sorted(dims)}")
    planes = {s.source_plane for s in slices}
    if planes != {plane}:
        raise ValueError(f"slices come from {sorted(p.name for p in planes)}, expected {plane.name}")
    data = np.stack([s.data for s in slices], axis=plane.axis)
    return Volume(data, voxel_size_nm)


# -- file I/O ---------------------------------------------------------------

_DTYPES = {"f32": np.dtype("<f4"), "u8": np.dtype("u1")}


def sidecar_path(path) -> Path:
    return Path(path).with_suffix(".json")


def load_volume(path) -> Volume:
    path = Path(path)
    side = sidecar_path(path)
    try:
        meta = json.loads(side.read_text())
        shape = tuple(int(s) for s in meta["shape"])
        vs = tuple(float(s) for s in meta.get("voxel_size_nm", (1.0, 1.0, 1.0)))
        dtype = _DTYPES[meta.get("dtype", "f32")]
    except FileNotFoundError as e:
        raise VolumeFormatError(f"missing sidecar {side}") from e
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
        raise VolumeFormatError(f"corrupt sidecar {side}: {e}") from e
    if len(shape) != 3:
        raise VolumeFormatError(f"sidecar shape must have 3 entries, got {shape}")
    raw = path.read_bytes()
    expected = int(np.prod(shape)) * dtype.itemsize
    if len(raw) != expected:
        raise VolumeFormatError(
            f"{path}: {len(raw)} bytes on disk, sidecar shape {list(shape)} "
            f"({dtype.name}) needs {expected}")
    data = np.frombuffer(raw, dtype=dtype).reshape(shape)
    if dtype == np.uint8:
        data = data.astype(np.float32) / np.float32(255.0)
    else:
        data = data.astype(np.float32)
        if not np.all(np.isfinite(data)):
            raise VolumeFormatError(f"{path}: non-finite intensities")
        lo, hi = float(data.min()), float(data.max())
        if lo < 0.0 or hi > 1.0:
            log.warning("%s: intensities [%g, %g] rescaled to [0, 1]", path, lo, hi)
            data = (data - lo) / max(hi - lo, np.finfo(np.float32).tiny)
    return Volume(data, vs)


def save_volume(v: Volume, path, dtype: str = "f32") -> None:
    if dtype not in _DTYPES:
        raise ValueError(f"dtype must be one of {sorted(_DTYPES)}")
    path = Path(path)
    if dtype == "u8":
        arr = np.round(v.data * 255.0).astype(np.uint8)
    else:
        arr = v.data.astype("<f4")
    meta = {"shape": list(v.shape), "voxel_size_nm": list(v.voxel_size_nm), "dtype": dtype}
    path.write_bytes(arr.tobytes(order="C"))
    sidecar_path(path).write_text(json.dumps(meta))


# -- phantom ----------------------------------------------------------------

def _ellipsoid(grid, center, axes, rot):
    rel = np.stack([g - c for g, c in zip(grid, center)], axis=-1)
    local = rel @ rot  # rows of rot.T are the ellipsoid axes
    return np.sqrt(np.sum((local / axes) ** 2, axis=-1))


def _tube_distance(shape, rng, extent):
    """Distance field to a randomly oriented, gently curved centerline."""
    rot = Rotation.random(random_state=rng).as_matrix()
    u, v = rot[:, 0], rot[:, 1]
    center = rng.uniform(0.2, 0.8, 3) * np.array(shape)
    half = extent * rng.uniform(0.4, 0.8)
    amp = extent * rng.uniform(0.05, 0.2)
    omega = rng.uniform(0.5, 2.0) * np.pi / half
    phase = rng.uniform(0, 2 * np.pi)
    s = np.linspace(-half, half, int(8 * half) + 2)
    pts = center + s[:, None] * u + (amp * np.sin(omega * s + phase))[:, None] * v
    idx = np.round(pts).astype(np.int64)
    inside = np.all((idx >= 0) & (idx < np.array(shape)), axis=1)
    mask = np.ones(shape, dtype=bool)
    if inside.any():
        idx = idx[inside]
        mask[idx[:, 0], idx[:, 1], idx[:, 2]] = False
    else:
        return np.full(shape, np.inf)
    return ndimage.distance_transform_edt(mask)


def generate_phantom(seed: int, shape=(64, 64, 64), n_structures: int = 24,
                     voxel_size_nm=(10.0, 10.0, 10.0)) -> Volume:
    """Synthetic membrane-like volume: shelled ellipsoids and curved tubes.

    Structures have uniformly random positions and orientations so their
    statistics do not depend on the axis; the result is Gaussian-smoothed with
    sigma 1 voxel and rescaled to [0.05, 0.95].
    """
    shape = tuple(int(s) for s in shape)
    if len(shape) != 3 or min(shape) < 16:
        raise ValueError(f"phantom shape must be 3D with every extent >= 16, got {shape}")
    if n_structures < 1:
        raise ValueError("n_structures must be >= 1")
    rng = np.random.default_rng(seed)
    extent = float(min(shape))

    texture = ndimage.gaussian_filter(rng.standard_normal(shape), 2.0, mode="wrap")
    vol = 0.5 + 0.04 * texture / (texture.std() + 1e-12)

    grid = np.meshgrid(*[np.arange(s, dtype=np.float64) for s in shape], indexing="ij")
    for _ in range(n_structures):
        if rng.random() < 0.6:
            rot = Rotation.random(random_state=rng).as_matrix()
            center = rng.uniform(0, 1, 3) * np.array(shape)
            axes = rng.uniform(2.5, max(3.0, extent / 6), 3)
            q = _ellipsoid(grid, center, axes, rot)
            shell = 1.0 / min(axes)  # ~1 voxel thick membrane
            fill = rng.uniform(-0.15, 0.2)
            vol = np.where(q < 1 - shell, vol + fill, vol)
            vol = np.where(np.abs(q - 1) <= shell, 0.15, vol)
        else:
            dist = _tube_distance(shape, rng, extent)
            radius = rng.uniform(1.5, 3.5)
            vol = np.where(dist < radius - 1.0, 0.8, vol)
            vol = np.where(np.abs(dist - radius + 0.5) < 0.75, 0.15, vol)

    vol = ndimage.gaussian_filter(vol, 1.0, mode="nearest")
    lo, hi = vol.min(), vol.max()
    vol = 0.05 + 0.9 * (vol - lo) / max(hi - lo, 1e-12)
    return Volume(vol.astype(np.float32), voxel_size_nm)
