import numpy as np
import pytest
from hypothesis import assume, given, strategies as st
from hypothesis.extra import numpy as hnp
from scipy.stats import norm

from engrave.errors import ConfigError, DataError
from engrave.preprocess import (PreprocessConfig, channel_stats, clip_and_rescale, highpass_depth,
                                normalize_normals)


def _sinusoid(period, n=512):
    x = np.arange(n)
    return np.tile(np.sin(2 * np.pi * x / period), (64, 1))


def _passed_fraction(period, sigma):
    a = _sinusoid(period)
    out = highpass_depth(a, PreprocessConfig(gaussian_sigma_px=sigma))
    core = out[:, 128:-128]
    return np.sqrt(2 * np.mean(core**2))


def test_constant_is_annihilated():
    np.testing.assert_allclose(highpass_depth(np.full((40, 50), 3.7)), 0.0, atol=1e-12)


def test_long_period_mostly_removed():
    sigma = 4.0
    assert _passed_fraction(20 * sigma, sigma) <= 0.10


def test_long_period_matches_gaussian_transfer():
    sigma = 4.0
    f = 1.0 / (20 * sigma)
    expected = 1 - np.exp(-2 * np.pi**2 * sigma**2 * f**2)
    assert abs(_passed_fraction(20 * sigma, sigma) - expected) < 0.02


def test_short_period_passes():
    sigma = 8.0
    assert _passed_fraction(sigma, sigma) >= 0.90


def test_sigma_too_large():
    with pytest.raises(ConfigError):
        highpass_depth(np.zeros((30, 100)), PreprocessConfig(gaussian_sigma_px=16))


def test_sigma_below_one_rejected():
    with pytest.raises(ConfigError):
        PreprocessConfig(gaussian_sigma_px=0.5)


def test_sigma_scales_with_resolution():
    cfg = PreprocessConfig(gaussian_sigma_px=16)
    assert cfg.sigma_for(None) == 16
    assert cfg.sigma_for(77.0) == pytest.approx(32.0)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, 2**16))
def test_highpass_linear(a, b, seed):
    r = np.random.default_rng(seed)
    x, y = r.normal(size=(2, 40, 48))
    cfg = PreprocessConfig(gaussian_sigma_px=3)
    lhs = highpass_depth(a * x + b * y, cfg)
    rhs = a * highpass_depth(x, cfg) + b * highpass_depth(y, cfg)
    scale = max(np.abs(lhs).max(), np.abs(rhs).max(), 1e-300)
    assert np.abs(lhs - rhs).max() <= 1e-10 * scale + 1e-14


def test_clip_endpoint_and_affine_interior():
    vals = np.concatenate([np.linspace(-1, 1, 999), [100.0]])[None, :]
    out, stats = clip_and_rescale(vals, np.ones_like(vals, bool))
    assert out.max() == 1.0
    lo = stats.mu - 3 * stats.sigma
    hi = stats.mu + 3 * stats.sigma
    inner = (vals > lo) & (vals < hi)
    np.testing.assert_allclose(out[inner], (vals[inner] - lo) / (hi - lo), rtol=1e-12)


def test_gaussian_tail_fraction(rng):
    g = rng.normal(size=(1000, 1000))
    out, _ = clip_and_rescale(g, np.ones(g.shape, bool))
    frac = np.mean((out == 0.0) | (out == 1.0))
    assert abs(frac - 2 * norm.sf(3)) < 0.001


def test_stats_use_mask_only(rng):
    g = rng.normal(size=(20, 20))
    mask = np.zeros(g.shape, bool)
    mask[:, :10] = True
    _, s1 = clip_and_rescale(g, mask)
    g2 = g.copy()
    g2[:, 10:] = rng.normal(50, 9, size=(20, 10))
    _, s2 = clip_and_rescale(g2, mask)
    assert s1 == s2
    assert s1.mu == pytest.approx(g[:, :10].mean())
    assert s1.sigma == pytest.approx(g[:, :10].std(ddof=0))


def test_constant_masked_region_is_degenerate():
    g = np.zeros((4, 4))
    g[0, 0] = 1
    mask = np.zeros((4, 4), bool)
    mask[2:, 2:] = True
    with pytest.raises(DataError):
        clip_and_rescale(g, mask)
    with pytest.raises(DataError):
        clip_and_rescale(g, np.eye(4, dtype=bool) & (np.arange(4) == 0))


@given(hnp.arrays(np.float64, (6, 7), elements=st.floats(-1e6, 1e6).filter(lambda v: v == 0 or abs(v) > 1e-100)))
def test_clip_output_in_unit_interval(a):
    assume(np.ptp(a) > 0)
    out, _ = clip_and_rescale(a, np.ones(a.shape, bool))
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_three_collinear_interior_values():
    vals = np.array([[-10.0, 0.1, 0.2, 0.3, 10.0, 0.0, 0.05, -0.05]])
    out, _ = clip_and_rescale(vals, np.ones(vals.shape, bool))
    a, b, c = out[0, 1:4]
    assert (b - a) == pytest.approx(c - b, rel=1e-12)


@pytest.mark.parametrize("vec, unit", [((0, 0, 2), (0, 0, 1)), ((3, 4, 0), (0.6, 0.8, 0))])
def test_normalize_examples(vec, unit):
    out, valid = normalize_normals(np.array([[vec]], dtype=float))
    assert valid.all()
    np.testing.assert_allclose(out[0, 0], unit)


def test_normalize_zero_vector():
    out, valid = normalize_normals(np.zeros((1, 1, 3)))
    assert not valid[0, 0]
    np.testing.assert_array_equal(out[0, 0], [0, 0, 1])


@given(hnp.arrays(np.float64, (4, 5, 3), elements=st.floats(-1e3, 1e3)))
def test_normalize_idempotent(a):
    once, v1 = normalize_normals(a)
    twice, v2 = normalize_normals(once, v1)
    np.testing.assert_array_equal(v1, v2)
    np.testing.assert_allclose(twice, once, atol=1e-15)
    assert np.all(np.abs(np.linalg.norm(once[v1], axis=-1) - 1) <= 1e-6)


def test_channel_stats_two_point():
    g = np.array([[0.0, 1.0]])
    (s,) = channel_stats([g], [np.ones_like(g, bool)])
    assert (s.mu, s.sigma) == (0.5, 0.5)
    (d,) = channel_stats([g], [np.array([[True, False]])])
    assert (d.mu, d.sigma) == (0.0, 0.0) and d.degenerate


def test_channel_stats_pooled_matches_flattening(rng):
    grids = [rng.normal(size=(5, 6, 3)), rng.normal(size=(4, 8, 3))]
    masks = [rng.random((5, 6)) > 0.3, rng.random((4, 8)) > 0.6]
    stats = channel_stats(grids, masks)
    flat = np.concatenate([g[m] for g, m in zip(grids, masks)])
    for c, s in enumerate(stats):
        assert s.mu == pytest.approx(flat[:, c].mean(), rel=1e-12)
        assert s.sigma == pytest.approx(flat[:, c].std(), rel=1e-12)


def test_channel_stats_empty_region():
    with pytest.raises(DataError):
        channel_stats([np.zeros((2, 2))], [np.zeros((2, 2), bool)])


@given(st.floats(-1e3, 1e3))
def test_channel_stats_ignore_outside(v):
    g = np.arange(12.0).reshape(3, 4)
    m = g < 6
    before = channel_stats([g], [m])
    g2 = np.where(m, g, v)
    assert channel_stats([g2], [m]) == before
