import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy.stats import ks_2samp

from d2r.degradation import (
    DegradationConfig,
    NoiseParams,
    add_poisson_gaussian_noise,
    approx_gaussian_noise,
    degrade_slice_rows,
    downsample_discard,
    downsample_mean,
    make_stage1_pairs,
    upsample_rows,
)
from d2r.volume import Plane, SliceImage, Volume, get_slice

N = 100_000


def _var_se(samples: np.ndarray) -> float:
    """Standard error of the sample variance (fourth-moment form)."""
    c = samples - samples.mean()
    m4 = np.mean(c**4)
    m2 = np.mean(c**2)
    return float(np.sqrt((m4 - m2**2) / len(samples)))


def test_noise_params_validation():
    with pytest.raises(ValueError):
        NoiseParams(-0.1, 0.0)
    assert NoiseParams().is_zero


def test_zero_noise_is_identity(rng):
    v = Volume(rng.random((4, 5, 6), dtype=np.float32))
    assert add_poisson_gaussian_noise(v, NoiseParams(0, 0, 3)) is v
    assert approx_gaussian_noise(v, NoiseParams(0, 0, 3)) is v


def test_gaussian_std():
    y = add_poisson_gaussian_noise(np.full(N, 0.5), NoiseParams(0.0, 0.1, 7)).astype(np.float64)
    sd = y.std()
    # std of the sample std is about sigma / sqrt(2N)
    assert abs(sd - 0.1) < 3 * 0.1 / np.sqrt(2 * N)


def test_poisson_variance_identity():
    y = add_poisson_gaussian_noise(np.full(N, 0.5), NoiseParams(0.01, 0.0, 8)).astype(np.float64)
    assert abs(y.var() - 0.005) < 3 * _var_se(y)
    assert abs(y.mean() - 0.5) < 3 * np.sqrt(0.005 / N)


def test_signal_dependent_variance():
    y = approx_gaussian_noise(np.full(N, 0.5), NoiseParams(0.01, 0.1, 9)).astype(np.float64)
    assert abs(y.var() - 0.015) < 3 * _var_se(y)


def test_approx_alpha_zero_is_additive():
    y = approx_gaussian_noise(np.full(N, 0.5), NoiseParams(0.0, 0.05, 10)).astype(np.float64)
    assert abs(y.var() - 0.0025) < 3 * _var_se(y)


def test_approx_matches_poisson_gaussian_in_distribution():
    x = np.full(N, 0.5)
    full = add_poisson_gaussian_noise(x, NoiseParams(0.004, 0.05, 1))
    approx = approx_gaussian_noise(x, NoiseParams(0.004, 0.05, 2))
    assert ks_2samp(full, approx).statistic < 0.02


@given(st.integers(0, 2**31 - 1))
def test_noise_is_pure_in_seed(seed):
    x = np.linspace(0, 1, 64).reshape(8, 8)
    p = NoiseParams(0.004, 0.05, seed)
    np.testing.assert_array_equal(add_poisson_gaussian_noise(x, p), add_poisson_gaussian_noise(x, p))
    np.testing.assert_array_equal(approx_gaussian_noise(x, p), approx_gaussian_noise(x, p))
    out = add_poisson_gaussian_noise(x, p)
    assert out.min() >= 0 and out.max() <= 1


def test_noise_preserves_type(rng):
    s = SliceImage(rng.random((4, 4), dtype=np.float32), Plane.XZ, 2)
    out = approx_gaussian_noise(s, NoiseParams(0.01, 0.01, 0))
    assert isinstance(out, SliceImage) and out.source_plane is Plane.XZ and out.source_index == 2


# -- downsampling -------------------------------------------------------------

def test_discard_512_by_8():
    z = np.repeat(np.arange(512, dtype=np.float32)[:, None, None] / 511, 2, axis=1).repeat(2, axis=2)
    v = Volume(z, (10.0, 10.0, 10.0))
    low = downsample_discard(v, DegradationConfig(r=8))
    assert low.shape == (64, 2, 2)
    np.testing.assert_array_equal(low.data, v.data[::8])
    assert low.voxel_size_nm == (80.0, 10.0, 10.0)


def test_discard_config_rules(rng):
    with pytest.raises(ValueError):
        DegradationConfig(r=1)
    with pytest.raises(ValueError):
        DegradationConfig(r=4, keep_phase=4)
    v = Volume(rng.random((9, 2, 2), dtype=np.float32))
    low = downsample_discard(v, DegradationConfig(r=8))
    np.testing.assert_array_equal(low.data, v.data[[0, 8]])
    with pytest.raises(ValueError):
        downsample_discard(Volume(rng.random((8, 2, 2), dtype=np.float32)), DegradationConfig(r=8))


@given(st.integers(2, 5), st.data())
def test_discard_is_exact_subsampling(r, data):
    phase = data.draw(st.integers(0, r - 1))
    z = data.draw(st.integers(phase + r + 1, 30))
    a = np.random.default_rng(z).random((z, 3, 4), dtype=np.float32)
    low = downsample_discard(Volume(a), DegradationConfig(r=r, keep_phase=phase))
    for i in range(low.shape[0]):
        np.testing.assert_array_equal(low.data[i], a[phase + i * r])


def test_mean_constant_and_divisibility():
    v = Volume(np.full((8, 3, 3), 0.3, np.float32))
    np.testing.assert_allclose(downsample_mean(v, 4).data, 0.3, atol=1e-7)
    with pytest.raises(ValueError):
        downsample_mean(Volume(np.zeros((10, 2, 2), np.float32)), 4)


def test_mean_reduces_variance_by_r():
    clean = Volume(np.full((64, 64, 64), 0.5, np.float32))
    noisy = add_poisson_gaussian_noise(clean, NoiseParams(0.0, 0.1, 4))
    low = downsample_mean(noisy, 8)
    assert low.data.size >= 32_000
    ratio = low.data.astype(np.float64).var() / noisy.data.astype(np.float64).var()
    assert abs(ratio * 8 - 1) < 0.1
    assert abs(low.data.astype(np.float64).var() - 0.01 / 8) < 0.1 * 0.01 / 8


# -- slice degradation ----------------------------------------------------------

def test_degrade_rows_shape(rng):
    s = SliceImage(rng.random((512, 512), dtype=np.float32))
    assert degrade_slice_rows(s, 8).data.shape == (64, 512)
    with pytest.raises(ValueError):
        degrade_slice_rows(SliceImage(np.zeros((6, 4), np.float32)), 8)


@given(st.integers(2, 4), st.data())
def test_slicing_commutes_with_discard(r, data):
    phase = data.draw(st.integers(0, r - 1))
    shape = (data.draw(st.integers(2 * r + phase, 20)), data.draw(st.integers(1, 6)),
             data.draw(st.integers(1, 6)))
    a = np.random.default_rng(sum(shape)).random(shape, dtype=np.float32)
    v = Volume(a)
    low = downsample_discard(v, DegradationConfig(r=r, keep_phase=phase))
    for plane in (Plane.XZ, Plane.YZ):
        for i in range(shape[plane.axis]):
            lhs = degrade_slice_rows(get_slice(v, plane, i), r, phase)
            np.testing.assert_array_equal(lhs.data, get_slice(low, plane, i).data)


def test_upsample_rows_convention(rng):
    low = rng.random((64, 5), dtype=np.float32)
    assert upsample_rows(low, 8).shape == (505, 5)


# -- stage I pairs ----------------------------------------------------------------

def test_pairs_contract(phantom32):
    cfg = DegradationConfig(r=4, noise=NoiseParams(0.004, 0.05))
    pairs = make_stage1_pairs(phantom32, cfg, 100, (17, 16), seed=3)
    assert len(pairs) == 100
    assert all(d.data.shape == (17, 16) and c.data.shape == (17, 16) for d, c in pairs)
    again = make_stage1_pairs(phantom32, cfg, 100, (17, 16), seed=3)
    assert all(np.array_equal(a[0].data, b[0].data) for a, b in zip(pairs, again))


def test_pairs_constant_patch():
    v = Volume(np.full((4, 24, 24), 0.4, np.float32))
    cfg = DegradationConfig(r=4, noise=NoiseParams(0.004, 0.05), noisy_inputs=False)
    for deg, clean in make_stage1_pairs(v, cfg, 5, (17, 16), seed=0):
        np.testing.assert_allclose(deg.data, clean.data, atol=1e-6)


def test_pairs_ramp_reproduced():
    ramp = np.linspace(0.1, 0.9, 33, dtype=np.float32)[:, None]
    v = Volume(np.broadcast_to(ramp, (2, 33, 33)).copy())
    cfg = DegradationConfig(r=4, noisy_inputs=False)
    for deg, clean in make_stage1_pairs(v, cfg, 6, (33, 8), seed=1):
        assert np.max(np.abs(deg.data - clean.data)) < 1e-3


def test_pairs_patch_too_large(phantom32):
    with pytest.raises(ValueError):
        make_stage1_pairs(phantom32, DegradationConfig(r=4), 1, (40, 8), seed=0)
