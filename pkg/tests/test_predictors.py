import numpy as np
import pytest
from hypothesis import given, strategies as st

from engrave.errors import ConfigError, DataError, DimensionError
from engrave.grid import write_grid
from engrave.patchwork import PatchRef
from engrave.predictors import (PredictorConfig, binarize, load_external_probs, otsu_threshold, ridge_response,
                                sauvola_map)
from engrave.synth import FWHM


def _otsu_bruteforce(values, bins=256):
    """Scan every bin edge, scoring the split of bin-centre-quantized values directly."""
    idx = np.clip((values.ravel() * bins).astype(int), 0, bins - 1)
    q = (idx + 0.5) / bins
    best, best_k = -1.0, None
    for k in range(1, bins):
        lo, hi = q[idx < k], q[idx >= k]
        if lo.size == 0 or hi.size == 0:
            continue
        w0, w1 = lo.size / q.size, hi.size / q.size
        between = w0 * w1 * (lo.mean() - hi.mean()) ** 2
        if between > best * (1 + 1e-12):
            best, best_k = between, k
    return best_k / bins


def _sauvola_naive(g, window, k, R):
    r = window // 2
    p = np.pad(g, r, mode="symmetric")
    out = np.empty_like(g)
    for y in range(g.shape[0]):
        for x in range(g.shape[1]):
            win = p[y:y + window, x:x + window]
            out[y, x] = win.mean() * (1 + k * (win.std() / R - 1))
    return out


def test_otsu_two_deltas():
    g = np.array([0.2] * 50 + [0.8] * 50)[None, :]
    t = otsu_threshold(g)
    assert t == (int(0.2 * 256) + 1) / 256
    assert np.count_nonzero(g < t) == 50


def test_otsu_zero_one():
    g = np.array([[0.0, 1.0] * 10])
    t = otsu_threshold(g)
    assert np.array_equal(g < t, g == 0.0)


def test_otsu_degenerate():
    with pytest.raises(DataError):
        otsu_threshold(np.full((4, 4), 0.3))


@given(st.integers(0, 2**20))
def test_otsu_matches_exhaustive_scan(seed):
    g = np.random.default_rng(seed).random((40, 40))
    assert otsu_threshold(g) == _otsu_bruteforce(g)


def test_otsu_bimodal_against_scan(rng):
    g = np.clip(np.concatenate([rng.normal(0.3, 0.05, 3000), rng.normal(0.7, 0.1, 1000)]), 0, 1)
    assert otsu_threshold(g) == _otsu_bruteforce(g)


@given(st.integers(0, 2**20))
def test_otsu_partition_invariant_under_bin_preserving_relabeling(seed):
    r = np.random.default_rng(seed)
    g = r.random(600)
    bins = np.floor(g * 256)
    # move every value to another position inside its own bin, keeping the order of bins
    g2 = (bins + r.uniform(0.0, 1.0, g.size) * 0.999) / 256
    assert np.array_equal(g < otsu_threshold(g), g2 < otsu_threshold(g2))


def test_sauvola_constant_region():
    t = sauvola_map(np.full((30, 30), 0.5))
    np.testing.assert_allclose(t, 0.4, atol=1e-12)


@given(st.floats(0.0, 1.0), st.floats(0.0, 0.5))
def test_sauvola_flat_is_global_scaling(mu, k):
    t = sauvola_map(np.full((30, 30), mu), PredictorConfig(sauvola_k=k))
    np.testing.assert_allclose(t, mu * (1 - k), atol=1e-9)


def test_sauvola_k_zero_is_local_mean(rng):
    g = rng.random((32, 32))
    t = sauvola_map(g, PredictorConfig(sauvola_k=0.0, sauvola_window=5))
    p = np.pad(g, 2, mode="symmetric")
    np.testing.assert_allclose(t[7, 9], p[7:12, 9:14].mean(), atol=1e-12)


@pytest.mark.parametrize("window", [3, 9, 25])
def test_sauvola_matches_naive(rng, window):
    g = rng.random((64, 64))
    cfg = PredictorConfig(sauvola_window=window)
    assert np.abs(sauvola_map(g, cfg) - _sauvola_naive(g, window, 0.2, 0.5)).max() < 1e-9


def test_sauvola_window_validation():
    with pytest.raises(ConfigError):
        PredictorConfig(sauvola_window=24)
    with pytest.raises(ConfigError):
        PredictorConfig(sauvola_window=1)
    with pytest.raises(ConfigError):
        sauvola_map(np.zeros((10, 10)), PredictorConfig(sauvola_window=25))


def test_ridge_scales_validation():
    with pytest.raises(ConfigError):
        PredictorConfig(ridge_scales=())
    with pytest.raises(ConfigError):
        PredictorConfig(ridge_scales=(4, 2))


def test_ridge_constant_input():
    assert not ridge_response(np.full((40, 40), 0.3)).any()


def _valley(width=4.0, depth=1.0, size=64, sign=-1.0):
    x = np.arange(size) - size / 2
    profile = sign * depth * np.exp(-0.5 * (x / (width / FWHM)) ** 2)
    return np.tile(profile, (size, 1))


def test_ridge_valley_centerline():
    v = _valley()
    r = ridge_response(v, PredictorConfig(ridge_scales=(2.0, 4.0)))
    c = v.shape[1] // 2
    row = r[32]
    assert row[c] >= 5 * row[c + 10] and row[c] >= 5 * row[c - 10]


def test_ridge_polarity_selects_sign():
    inverted = _valley(sign=1.0)
    r = ridge_response(inverted, PredictorConfig(ridge_scales=(2.0, 4.0)))
    assert r[32, 32] == 0.0
    r2 = ridge_response(inverted, PredictorConfig(ridge_scales=(2.0, 4.0), polarity="ridges"))
    assert r2[32, 32] > 0.9


def test_ridge_rotation_equivariance(rng):
    g = rng.normal(size=(48, 48))
    r = ridge_response(g)
    np.testing.assert_allclose(ridge_response(np.rot90(g)), np.rot90(r), atol=1e-6)


def test_ridge_output_range(rng):
    r = ridge_response(rng.normal(size=(64, 64)))
    assert r.min() >= 0 and r.max() <= 1
    assert r.max() == 1.0


def test_ridge_floor_limits_stretch(rng):
    weak = 1e-4 * rng.normal(size=(64, 64))
    assert ridge_response(weak).max() == 1.0
    assert ridge_response(weak, PredictorConfig(ridge_floor=1.0)).max() < 1e-2


def test_binarize_examples():
    assert binarize(np.full((3, 3), 0.6), 0.5, "ridges").all()
    assert not binarize(np.random.default_rng(0).random((5, 5)), 1.0 + 1e-9, "ridges").any()
    assert binarize(np.array([[0.3]]), 0.4, "valleys")[0, 0]
    with pytest.raises(DimensionError):
        binarize(np.zeros((3, 3)), np.zeros((2, 2)))


@given(st.floats(0, 1), st.floats(0, 1), st.integers(0, 2**16))
def test_binarize_monotone(t1, t2, seed):
    g = np.random.default_rng(seed).random((10, 10))
    lo, hi = sorted((t1, t2))
    assert not (binarize(g, hi) & ~binarize(g, lo)).any()


def test_load_external(tmp_path, rng):
    refs = [PatchRef(0, 0, 8, "m"), PatchRef(8, 0, 8, "m"), PatchRef(0, 8, 8, "m")]
    written = {}
    for r in refs:
        written[r] = rng.random((8, 8)).astype(np.float32).astype(np.float64)
        write_grid(written[r], tmp_path / f"{r.id}.etgr")
    got = load_external_probs(tmp_path, refs)
    assert len(got) == 3
    for r in refs:
        np.testing.assert_array_equal(got[r], written[r])


def test_load_external_half_size(tmp_path):
    r = PatchRef(0, 0, 8, "m")
    write_grid(np.full((4, 4), 0.25), tmp_path / f"{r.id}.etgr")
    with pytest.raises(DimensionError):
        load_external_probs(tmp_path, [r])
    np.testing.assert_allclose(load_external_probs(tmp_path, [r], allow_half=True)[r], 0.25)


def test_load_external_errors(tmp_path):
    r = PatchRef(0, 0, 4, "m")
    with pytest.raises(DataError, match="missing"):
        load_external_probs(tmp_path, [r])
    write_grid(np.full((4, 4), 1.5), tmp_path / f"{r.id}.etgr")
    with pytest.raises(DataError, match="outside"):
        load_external_probs(tmp_path, [r])
    write_grid(np.full((4, 4), 1 + 5e-7), tmp_path / f"{r.id}.etgr")
    assert load_external_probs(tmp_path, [r])[r].max() == 1.0
