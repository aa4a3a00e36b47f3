import numpy as np
import pytest
from hypothesis import given, strategies as st
from hypothesis.extra import numpy as hnp

from engrave import patchwork as pw
from engrave.errors import ConfigError, DataError, DimensionError
from engrave.patchwork import (ManifestRecord, MixSpec, PatchRef, augment_standard, cutmix, extract, mixup,
                               plan_eval_patches, plan_inference_patches, plan_tiles, read_manifest,
                               resize_half, sample_train_patches, split_eval, upsample_double, write_manifest)
from engrave.photometric import normals_from_depth


def _coverage(layout, tiles):
    cov = np.zeros((layout.padded_h, layout.padded_w), np.int32)
    for t in tiles:
        x, y = t.origin_x + layout.pad_left, t.origin_y + layout.pad_top
        cov[y:y + t.h, x:x + t.width] += 1
    return cov


def test_large_mirror_tiling():
    layout, tiles = plan_tiles(8964, 6716)
    assert (layout.padded_w, layout.padded_h) == (8964, 6720)
    assert len(tiles) == 25
    assert {(t.width, t.h) for t in tiles} == {(2988, 2240)}
    assert (layout.tile_stride_x, layout.tile_stride_y) == (1494, 1120)
    assert layout.pad_top == 2 and layout.pad_left == 0
    xs = sorted({t.origin_x for t in tiles})
    ys = sorted({t.origin_y + layout.pad_top for t in tiles})
    assert xs == [0, 1494, 2988, 4482, 5976]
    assert ys == [0, 1120, 2240, 3360, 4480]


def test_single_tile():
    layout, tiles = plan_tiles(2988, 2240)
    assert len(tiles) == 1 and layout.pad_x == layout.pad_y == 0


def test_two_by_two_tiles():
    _, tiles = plan_tiles(4482, 3360, 2988, 2240)
    assert len(tiles) == 4


def test_smaller_than_tile():
    with pytest.raises(DataError):
        plan_tiles(1000, 800, 2988, 2240)


def test_auto_tiles():
    layout, tiles = plan_tiles(8964, 6716, "auto", "auto")
    assert (layout.tile_w, layout.tile_h) == (2988, 2240) and len(tiles) == 25
    layout, tiles = plan_tiles(1024, 1024, "auto", "auto")
    assert (layout.tile_w, layout.tile_h) == (512, 512) and len(tiles) == 9


@given(st.integers(600, 5000), st.integers(600, 5000))
def test_tiles_cover_padded_frame(w, h):
    layout, tiles = plan_tiles(w, h, "auto", "auto")
    assert (layout.padded_w - layout.tile_w) % layout.tile_stride_x == 0
    assert (layout.padded_h - layout.tile_h) % layout.tile_stride_y == 0
    assert layout.pad_x < layout.tile_stride_x and layout.pad_y < layout.tile_stride_y
    cov = _coverage(layout, tiles)
    assert cov.min() >= 1 and cov.max() <= 4
    assert all(layout.contains(t) for t in tiles)


@pytest.mark.parametrize("w, h, n", [(8964, 6716, 221), (512, 512, 1), (511, 512, 0)])
def test_eval_patch_counts(w, h, n):
    assert len(plan_eval_patches(w, h, 512)) == n


@given(st.integers(1, 3000), st.integers(1, 3000), st.sampled_from([64, 256, 512]))
def test_eval_patches_disjoint_and_aligned(w, h, p):
    refs = plan_eval_patches(w, h, p)
    assert len(refs) == (w // p) * (h // p)
    assert all(r.origin_x % p == 0 and r.origin_y % p == 0 for r in refs)
    assert len({(r.origin_x, r.origin_y) for r in refs}) == len(refs)
    assert all(r.origin_x + p <= w and r.origin_y + p <= h for r in refs)


def test_split_sizes_and_determinism():
    refs = plan_eval_patches(8964, 6716, 512)
    val, test = split_eval(refs, seed=3)
    assert sorted((len(val), len(test))) == [110, 111]
    again = split_eval(refs, seed=3)
    assert (val, test) == again
    v, t = split_eval(refs[:2], seed=0)
    assert len(v) == len(t) == 1


@given(st.integers(2, 60), st.integers(0, 10**6))
def test_split_is_partition(n, seed):
    refs = [PatchRef(512 * i, 0, 512, "m") for i in range(n)]
    val, test = split_eval(refs, seed)
    key = lambda r: (r.origin_x, r.origin_y)
    assert sorted(map(key, val + test)) == sorted(map(key, refs))
    assert abs(len(val) - len(test)) <= 1
    assert {r.split for r in val} == {"val"} and {r.split for r in test} <= {"test"}


def test_sample_train_patches():
    _, tiles = plan_tiles(2000, 1500, 1000, 800, patch=512)
    ann = np.zeros((1500, 2000), bool)
    ann[100, 100] = True
    first = tiles[0]
    refs = sample_train_patches(first, ann, 10, seed=7)
    assert len(refs) == 10
    for r in refs:
        assert first.origin_x <= r.origin_x <= first.origin_x + first.width - 512
        assert first.origin_y <= r.origin_y <= first.origin_y + first.h - 512
    assert refs == sample_train_patches(first, ann, 10, seed=7)
    assert sample_train_patches(tiles[-1], ann, 10, seed=7) == []


def test_extract_interior_and_margins():
    g = np.arange(100.0).reshape(10, 10)
    np.testing.assert_array_equal(extract(g, PatchRef(2, 3, 4)), g[3:7, 2:6])
    layout, _ = plan_tiles(10, 7, 4, 6, patch=4)
    assert (layout.pad_y, layout.pad_top) == (2, 1)
    assert not layout.contains(PatchRef(0, -2, 4))
    ref = PatchRef(0, -1, 4)
    z = extract(g[:7], ref, "zero", layout)
    r = extract(g[:7], ref, "reflect", layout)
    assert not z[0].any()
    np.testing.assert_array_equal(z[1:], g[0:3, 0:4])
    np.testing.assert_array_equal(r[0], g[0, 0:4])
    np.testing.assert_array_equal(r[1:], g[0:3, 0:4])
    bottom = extract(g[:7], PatchRef(0, 4, 4), "reflect", layout)
    np.testing.assert_array_equal(bottom[3], g[6, 0:4])


def test_extract_out_of_bounds():
    with pytest.raises(DataError):
        extract(np.zeros((8, 8)), PatchRef(6, 0, 4))


def test_resize_half_examples():
    np.testing.assert_array_equal(resize_half(np.full((512, 512), 0.3)), np.full((256, 256), 0.3))
    checker = (np.indices((8, 8)).sum(0) % 2).astype(float)
    np.testing.assert_array_equal(resize_half(checker), 0.5)
    np.testing.assert_array_equal(resize_half(np.array([[0.0, 0.0], [1.0, 1.0]])), [[0.5]])
    with pytest.raises(DimensionError):
        resize_half(np.zeros((5, 4)))


def test_upsample_double():
    up = upsample_double(np.full((3, 5), 0.7))
    assert up.shape == (6, 10)
    np.testing.assert_allclose(up, 0.7)
    ramp = np.tile(np.linspace(0, 1, 256), (64, 1))
    back = upsample_double(resize_half(ramp))
    assert np.abs(back - ramp).max() < 1 / 255


@given(hnp.arrays(np.float64, (6, 8), elements=st.floats(-5, 5)))
def test_upsample_within_input_range(a):
    up = upsample_double(a)
    assert up.min() >= a.min() and up.max() <= a.max()


def test_augment_involutions(rng):
    p, m = rng.random((16, 16)), rng.random((16, 16))
    q, n = augment_standard(*augment_standard(p, m, "flip_h"), "flip_h")
    np.testing.assert_array_equal(q, p)
    np.testing.assert_array_equal(n, m)
    q, n = p, m
    for _ in range(4):
        q, n = augment_standard(q, n, ("rot90", 1))
    np.testing.assert_array_equal(q, p)


def test_flip_h_normal_component():
    v = np.zeros((4, 4, 3))
    v[1, 2] = (1, 0, 0)
    out, _ = augment_standard(v, np.zeros((4, 4)), "flip_h")
    np.testing.assert_array_equal(out[1, 1], [-1, 0, 0])


@pytest.mark.parametrize("op", ["flip_h", "flip_v", ("rot90", 1), ("rot90", 2), ("rot90", 3)])
def test_vector_remap_matches_transformed_depth(op):
    # transforming a height field and re-deriving normals must agree with remapping the normals
    y, x = np.mgrid[0:24, 0:24].astype(float)
    z = np.sin(x / 3.0) + 0.3 * np.cos(y / 4.0) + 0.05 * x * y
    n = normals_from_depth(z)
    zt, _ = augment_standard(z, np.zeros_like(z), op)
    nt, _ = augment_standard(n, np.zeros_like(z), op)
    core = (slice(1, -1), slice(1, -1))
    np.testing.assert_allclose(nt[core], normals_from_depth(zt)[core], atol=1e-12)


@given(st.sampled_from(["flip_h", "flip_v", "rot90:1", "rot90:2", "rot90:3"]), st.integers(0, 2**16))
def test_geometric_ops_preserve_histogram(op, seed):
    r = np.random.default_rng(seed)
    p, m = r.random((12, 12)), r.random((12, 12))
    q, n = augment_standard(p, m, op)
    np.testing.assert_array_equal(np.sort(q.ravel()), np.sort(p.ravel()))
    np.testing.assert_array_equal(np.sort(n.ravel()), np.sort(m.ravel()))


def test_shift_reflect_fill():
    p = np.arange(64.0).reshape(8, 8)
    q, _ = augment_standard(p, np.zeros((8, 8)), ("shift", 1, 0))
    np.testing.assert_array_equal(q[:, 1:], p[:, :-1])
    np.testing.assert_array_equal(q[:, 0], p[:, 0])
    with pytest.raises(ConfigError):
        augment_standard(p, np.zeros((8, 8)), ("shift", 2, 0))


def test_cutmix_examples(rng):
    a = (rng.random((8, 8)), rng.random((8, 8)))
    b = (rng.random((8, 8)), rng.random((8, 8)))
    full = cutmix(a, b, (0, 0, 8, 8))
    np.testing.assert_array_equal(full[0], b[0])
    np.testing.assert_array_equal(full[1], b[1])
    one = cutmix(a, b, (3, 4, 1, 1))
    assert np.count_nonzero(one[0] != a[0]) == 1 and one[0][4, 3] == b[0][4, 3]
    same = cutmix(a, a, (1, 1, 3, 3))
    np.testing.assert_array_equal(same[0], a[0])
    with pytest.raises(ConfigError):
        cutmix(a, b, (0, 0, 0, 3))
    with pytest.raises(ConfigError):
        cutmix(a, b, (6, 6, 3, 3))


def test_mixup_examples(rng):
    z, o = np.zeros((4, 4)), np.ones((4, 4))
    np.testing.assert_array_equal(mixup((z, z), (o, o), 0.5)[0], 0.5)
    np.testing.assert_array_equal(mixup((o, o), (z, z), 0.4)[1], 0.4)
    a = (rng.random((4, 4)), rng.random((4, 4)))
    np.testing.assert_allclose(mixup(a, a, 0.43)[0], a[0], rtol=1e-15)
    with pytest.raises(ConfigError):
        mixup(a, a, 0.7)


@given(st.floats(0.4, 0.6), st.integers(0, 2**16))
def test_mixup_convex_hull(lam, seed):
    r = np.random.default_rng(seed)
    a = (r.normal(size=(5, 5)), r.random((5, 5)))
    b = (r.normal(size=(5, 5)), r.random((5, 5)))
    out, mask = mixup(a, b, lam)
    assert np.all(out >= np.minimum(a[0], b[0]) - 1e-12) and np.all(out <= np.maximum(a[0], b[0]) + 1e-12)
    assert np.all(mask >= np.minimum(a[1], b[1]) - 1e-12) and np.all(mask <= np.maximum(a[1], b[1]) + 1e-12)


def test_mixspec_lambda_range():
    with pytest.raises(ConfigError):
        MixSpec("mixup", PatchRef(0, 0, 8), lam=0.39)
    r = np.random.default_rng(0)
    for _ in range(50):
        spec = pw.random_mixspec(r, "mixup", 8, PatchRef(0, 0, 8))
        assert 0.4 <= spec.lam <= 0.6
        box = pw.random_mixspec(r, "cutmix", 8, PatchRef(0, 0, 8))
        x, y, w, h = box.rect
        assert w > 0 and x + w <= 8 and y + h <= 8


def test_random_standard_ops_are_valid():
    r = np.random.default_rng(1)
    p = np.zeros((16, 16))
    for _ in range(100):
        augment_standard(p, p, pw.random_standard_op(r, 16))


def test_inference_patches_cover_everything():
    refs = plan_inference_patches(1000, 700, 256, 128)
    cov = np.zeros((700, 1000), int)
    for r in refs:
        cov[r.slices()] += 1
    assert cov.min() >= 1
    assert max(r.origin_x for r in refs) == 1000 - 256


def test_patchref_id_and_json():
    r = PatchRef(-2, 1120, 2988, "mir", "train", 2240)
    assert r.id == "mir_x-2_y1120_s2988x2240"
    assert PatchRef.from_json(r.to_json()) == r


def test_manifest_roundtrip(tmp_path):
    a, b = PatchRef(0, 0, 8, "m"), PatchRef(8, 0, 8, "m")
    recs = [ManifestRecord(a, {"input": "a.etgr"}, augment=("rot90", 2)),
            ManifestRecord(b, {"input": "b.etgr"}, mix=MixSpec("mixup", a, lam=0.45)),
            ManifestRecord(b, {}, mix=MixSpec("cutmix", a, rect=(1, 2, 3, 3)))]
    write_manifest(recs, tmp_path / "m.json")
    back = read_manifest(tmp_path / "m.json")
    assert [r.to_json() for r in back] == [r.to_json() for r in recs]
    write_manifest(back, tmp_path / "m2.json")
    assert (tmp_path / "m.json").read_bytes() == (tmp_path / "m2.json").read_bytes()
