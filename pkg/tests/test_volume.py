import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from d2r.volume import (
    Plane,
    SliceImage,
    Volume,
    VolumeFormatError,
    concat_slices,
    generate_phantom,
    get_slice,
    iter_slices,
    load_volume,
    save_volume,
    sidecar_path,
)

unit_floats = st.floats(0.0, 1.0, width=32, allow_nan=False)
shapes = st.tuples(st.integers(1, 6), st.integers(1, 6), st.integers(1, 6))


def test_plane_axes():
    assert [p.axis for p in Plane] == [0, 1, 2]
    assert len(Plane) == 3


def test_volume_rejects_bad_data():
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), 1.5, np.float32))
    with pytest.raises(ValueError):
        Volume(np.full((2, 2, 2), np.nan, np.float32))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2), np.float32))
    with pytest.raises(ValueError):
        Volume(np.zeros((2, 2, 2), np.float32), (1.0, 0.0, 1.0))


def test_volume_is_immutable():
    v = Volume(np.zeros((2, 3, 4), np.float32))
    assert v.shape == (2, 3, 4)
    with pytest.raises(ValueError):
        v.data[0, 0, 0] = 1.0


@pytest.mark.parametrize("plane,index,dims", [(Plane.XY, 3, (16, 32)), (Plane.XZ, 5, (8, 32)),
                                              (Plane.YZ, 7, (8, 16))])
def test_get_slice_dims(rng, plane, index, dims):
    v = Volume(rng.random((8, 16, 32), dtype=np.float32))
    s = get_slice(v, plane, index)
    assert (s.height, s.width) == dims
    assert s.source_plane is plane and s.source_index == index


def test_get_slice_out_of_range(rng):
    v = Volume(rng.random((8, 16, 32), dtype=np.float32))
    with pytest.raises(IndexError):
        get_slice(v, Plane.YZ, 40)
    with pytest.raises(IndexError):
        get_slice(v, Plane.XY, -1)


def test_lateral_slices_keep_z_on_rows(rng):
    data = rng.random((8, 16, 32), dtype=np.float32)
    v = Volume(data)
    np.testing.assert_array_equal(get_slice(v, Plane.XZ, 5).data, data[:, 5, :])
    np.testing.assert_array_equal(get_slice(v, Plane.YZ, 9).data, data[:, :, 9])


@given(arrays(np.float32, shapes, elements=unit_floats), st.sampled_from(list(Plane)))
def test_slice_concat_inverse(data, plane):
    v = Volume(data)
    back = concat_slices(plane, list(iter_slices(v, plane)))
    np.testing.assert_array_equal(back.data, v.data)
    for i in range(v.shape[plane.axis]):
        np.testing.assert_array_equal(get_slice(back, plane, i).data, get_slice(v, plane, i).data)


def test_concat_rejects_mixed_dims_and_empty():
    a = SliceImage(np.zeros((8, 8), np.float32), Plane.XZ, 0)
    b = SliceImage(np.zeros((8, 9), np.float32), Plane.XZ, 1)
    with pytest.raises(ValueError):
        concat_slices(Plane.XZ, [a, b])
    with pytest.raises(ValueError):
        concat_slices(Plane.XZ, [])
    with pytest.raises(ValueError):
        concat_slices(Plane.YZ, [a])


def test_concat_xz_stack_matches_y_extent(rng):
    stack = [SliceImage(rng.random((13, 10), dtype=np.float32), Plane.XZ, j) for j in range(7)]
    v = concat_slices(Plane.XZ, stack)
    assert v.shape == (13, 7, 10)


# -- file I/O -----------------------------------------------------------------

def test_roundtrip_64_cube(tmp_path, rng):
    v = Volume(rng.random((64, 64, 64), dtype=np.float32), (10.0, 10.0, 10.0))
    save_volume(v, tmp_path / "v.f32")
    back = load_volume(tmp_path / "v.f32")
    assert back.shape == (64, 64, 64)
    np.testing.assert_array_equal(back.data, v.data)
    assert json.loads(sidecar_path(tmp_path / "v.f32").read_text())["voxel_size_nm"] == [10, 10, 10]


@given(arrays(np.float32, shapes, elements=unit_floats),
       st.tuples(*[st.floats(0.1, 100.0)] * 3))
def test_roundtrip_bit_exact(tmp_path_factory, data, vox):
    path = tmp_path_factory.mktemp("rt") / "vol.raw"
    v = Volume(data, vox)
    save_volume(v, path)
    back = load_volume(path)
    assert back.data.tobytes() == v.data.tobytes()
    assert back.voxel_size_nm == v.voxel_size_nm


def test_u8_scaling(tmp_path):
    raw = np.arange(8, dtype=np.uint8).reshape(2, 2, 2)
    raw[1, 1, 1] = 255
    (tmp_path / "u.raw").write_bytes(raw.tobytes())
    (tmp_path / "u.json").write_text(json.dumps({"shape": [2, 2, 2], "dtype": "u8"}))
    v = load_volume(tmp_path / "u.raw")
    assert v.data.max() == 1.0
    assert v.data[0, 0, 1] == pytest.approx(1 / 255)


def test_size_mismatch(tmp_path):
    (tmp_path / "bad.f32").write_bytes(np.zeros(65, "<f4").tobytes())
    (tmp_path / "bad.json").write_text(json.dumps({"shape": [4, 4, 4], "dtype": "f32"}))
    with pytest.raises(VolumeFormatError, match="65|260"):
        load_volume(tmp_path / "bad.f32")


def test_missing_and_corrupt_sidecar(tmp_path):
    (tmp_path / "a.f32").write_bytes(np.zeros(8, "<f4").tobytes())
    with pytest.raises(VolumeFormatError, match="sidecar"):
        load_volume(tmp_path / "a.f32")
    (tmp_path / "a.json").write_text("{not json")
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "a.f32")
    (tmp_path / "a.json").write_text(json.dumps({"voxel_size_nm": [1, 1, 1]}))
    with pytest.raises(VolumeFormatError):
        load_volume(tmp_path / "a.f32")


def test_out_of_range_f32_is_normalized(tmp_path):
    (tmp_path / "w.f32").write_bytes(np.array([0, 2, 4, 8, 0, 0, 0, 0], "<f4").tobytes())
    (tmp_path / "w.json").write_text(json.dumps({"shape": [2, 2, 2]}))
    v = load_volume(tmp_path / "w.f32")
    assert v.data.min() == 0.0 and v.data.max() == 1.0


def test_unwritable_destination(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    v = Volume(np.zeros((2, 2, 2), np.float32))
    with pytest.raises(OSError):
        save_volume(v, blocker / "v.f32")


# -- phantom ------------------------------------------------------------------

def test_phantom_deterministic():
    a = generate_phantom(1, (24, 20, 16), 6)
    b = generate_phantom(1, (24, 20, 16), 6)
    c = generate_phantom(2, (24, 20, 16), 6)
    assert a.data.tobytes() == b.data.tobytes()
    assert a.data.tobytes() != c.data.tobytes()


def test_phantom_rejects_bad_args():
    with pytest.raises(ValueError):
        generate_phantom(0, (32, 32, 32), 0)
    with pytest.raises(ValueError):
        generate_phantom(0, (8, 32, 32), 4)


def test_phantom_dynamic_range():
    v = generate_phantom(3, (32, 32, 32), 12)
    assert v.data.min() <= 0.1 and v.data.max() >= 0.9
    assert v.voxel_size_nm == (10.0, 10.0, 10.0)


def _gradient_magnitudes(a: np.ndarray, plane: Plane) -> np.ndarray:
    row_axis = 1 if plane is Plane.XY else 0
    return np.hypot(np.gradient(a, axis=row_axis), np.gradient(a, axis=2)).ravel()


def test_phantom_isotropy():
    xy, xz = [], []
    for seed in range(2):
        a = generate_phantom(seed, (48, 48, 48)).data.astype(np.float64)
        xy.append(_gradient_magnitudes(a, Plane.XY))
        xz.append(_gradient_magnitudes(a, Plane.XZ))
    xy, xz = np.concatenate(xy), np.concatenate(xz)
    # equal-mass bins over the pooled distribution
    edges = np.quantile(np.concatenate([xy, xz]), np.linspace(0, 1, 11))
    edges[-1] += 1e-9
    hxy = np.histogram(xy, edges)[0].astype(float)
    hxz = np.histogram(xz, edges)[0].astype(float)
    assert np.all(np.abs(hxy - hxz) <= 0.1 * hxy)
