import math
from itertools import product

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leafscope import corpus, features, raster
from leafscope.features import GROUPS, HCF_DIM, HCF_NAMES, FeatureError

from conftest import disk


def glcm_oracle(img, mask, levels):
    counts = {}
    h, w = img.shape
    for y, x in product(range(h), range(w - 1)):
        if mask[y, x] and mask[y, x + 1]:
            key = (int(img[y, x]) * levels // 256, int(img[y, x + 1]) * levels // 256)
            counts[key] = counts.get(key, 0) + 1
    total = sum(counts.values())
    return {k: v / total for k, v in counts.items()}


class TestGlcm:
    def test_constant(self):
        p = features.build_glcm(np.full((5, 6), 77, np.uint8))
        assert p[77 * 32 // 256, 77 * 32 // 256] == 1 and p.sum() == 1

    def test_row_pairs(self):
        p = features.build_glcm(np.array([[0, 0, 255, 255]], np.uint8), levels=32)
        assert p[0, 0] == pytest.approx(1 / 3)
        assert p[0, 31] == pytest.approx(1 / 3)
        assert p[31, 31] == pytest.approx(1 / 3)
        assert np.count_nonzero(p) == 3

    def test_masked_column(self):
        img = np.array([[0, 64, 128, 192, 255]] * 3, np.uint8)
        mask = np.ones(img.shape, bool)
        mask[:, 2] = False
        p = features.build_glcm(img, mask, 32)
        assert p[8, 16] == 0 and p[16, 24] == 0
        assert p[0, 8] == pytest.approx(0.5) and p[24, 31] == pytest.approx(0.5)

    @settings(max_examples=50, deadline=None)
    @given(
        arrays(np.uint8, (6, 7)),
        arrays(np.bool_, (6, 7)),
        st.sampled_from([2, 8, 32, 256]),
    )
    def test_matches_pair_enumeration(self, img, mask, levels):
        expected = glcm_oracle(img, mask, levels)
        if not expected:
            with pytest.raises(FeatureError):
                features.build_glcm(img, mask, levels)
            return
        p = features.build_glcm(img, mask, levels)
        assert p.sum() == pytest.approx(1)
        for (i, j), v in expected.items():
            assert p[i, j] == pytest.approx(v)
        assert np.count_nonzero(p) == len(expected)


class TestGlcmStats:
    def test_single_cell(self):
        p = np.zeros((4, 4))
        p[2, 2] = 1
        assert features.glcm_stats(p) == (0.0, 0.0, 0.0, 1.0)

    def test_uniform_two_levels(self):
        corr, contrast, entropy, energy = features.glcm_stats(np.full((2, 2), 0.25))
        assert contrast == pytest.approx(0.5)
        assert entropy == pytest.approx(2.0)
        assert energy == pytest.approx(0.25)
        assert corr == pytest.approx(0.0, abs=1e-12)

    def test_diagonal(self):
        corr, contrast, _, _ = features.glcm_stats(np.diag([0.5, 0.5]))
        assert contrast == 0 and corr == pytest.approx(1.0)

    def test_anti_diagonal(self):
        corr, contrast, _, _ = features.glcm_stats(np.array([[0, 0.5], [0.5, 0]]))
        assert contrast == pytest.approx(1.0) and corr == pytest.approx(-1.0)

    @settings(max_examples=50)
    @given(arrays(np.float64, (5, 5), elements=st.floats(0, 1)))
    def test_ranges(self, raw):
        if raw.sum() <= 0:
            return
        p = raw / raw.sum()
        corr, contrast, entropy, energy = features.glcm_stats(p)
        assert -1 - 1e-9 <= corr <= 1 + 1e-9
        assert contrast >= 0 and 0 <= entropy <= math.log2(25) + 1e-9
        assert 1 / 25 - 1e-12 <= energy <= 1 + 1e-12


class TestIntensity:
    def test_constant(self):
        mean, std = features.intensity_stats(np.full((3, 3), 51, np.uint8), np.ones((3, 3), bool))
        assert mean == pytest.approx(0.2) and std == 0

    def test_half_half(self):
        img = np.array([[0, 0, 255, 255]], np.uint8)
        assert features.intensity_stats(img, np.ones_like(img, bool)) == pytest.approx((0.5, 0.5))

    def test_three_pixels(self):
        img = np.array([[0.0, 127.5, 255.0, 9.0]])
        mask = np.array([[True, True, True, False]])
        mean, std = features.intensity_stats(img, mask)
        assert mean == pytest.approx(0.5)
        assert std == pytest.approx(math.sqrt(1 / 6))

    def test_empty(self):
        with pytest.raises(FeatureError):
            features.intensity_stats(np.zeros((2, 2)), np.zeros((2, 2), bool))


def hcf(mask, gray=None):
    if gray is None:
        gray = np.where(mask, 90, 255).astype(np.uint8)
    return dict(zip(HCF_NAMES, features.extract_hcf(mask, gray)))


class TestExtract:
    def test_disk(self):
        f = hcf(disk(256, 100))
        assert f["ovality"] == pytest.approx(1, abs=0.02)
        assert f["solidity"] == pytest.approx(1, abs=0.02)
        assert f["extent"] == pytest.approx(math.pi / 4, rel=0.03)
        assert f["equi_diameter"] == pytest.approx(200, rel=0.02)
        assert all(f[f"convexity_{i}"] == 0 for i in range(4))
        assert min(f[f"radius_{i}"] for i in range(36)) > 0.97

    def test_square(self):
        m = np.zeros((80, 80), bool)
        m[10:70, 10:70] = True
        f = hcf(m)
        assert f["extent"] == pytest.approx(1, abs=0.04)
        assert f["solidity"] == pytest.approx(1)
        assert f["ovality"] == pytest.approx(1)
        assert f["corner_count"] == 4

    def test_equi_diameter_formula(self):
        # area 100*pi inverts to a diameter of exactly 20
        assert math.sqrt(4 * 100 * math.pi / math.pi) == 20
        m = disk(128, 40)
        f = hcf(m)
        from leafscope import geometry

        area = geometry.contour_area(geometry.largest_contour(m))
        assert f["equi_diameter"] == pytest.approx(math.sqrt(4 * area / math.pi))

    def test_constant_leaf_texture(self):
        f = hcf(disk(64, 20))
        assert f["contrast"] == 0 and f["energy"] == 1 and f["entropy"] == 0 and f["correlation"] == 0
        assert f["mean"] == pytest.approx(90 / 255) and f["std_dev"] == 0

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            features.extract_hcf(np.ones((4, 4), bool), np.zeros((4, 5), np.uint8))

    def test_empty_mask(self):
        with pytest.raises(FeatureError):
            features.extract_hcf(np.zeros((10, 10), bool), np.zeros((10, 10), np.uint8))

    def test_single_row_names_feature(self):
        m = np.zeros((10, 20), bool)
        m[4, 2:15] = True
        with pytest.raises(FeatureError) as info:
            features.extract_hcf(m, np.zeros((10, 20), np.uint8))
        assert info.value.feature


def synth(seed, **kw):
    spec = corpus.LeafSpec(**kw)
    img, gt = corpus.synth_leaf(spec, size=160, seed=seed)
    return gt, raster.to_grayscale(img)


LEAVES = [
    dict(aspect=1.0),
    dict(aspect=2.5, serration=0.05, teeth=30),
    dict(aspect=1.1, lobes=3, lobe_depth=0.35),
    dict(aspect=1.4, lobes=5, lobe_depth=0.2),
]


@pytest.mark.parametrize("seed", range(len(LEAVES)))
class TestInvariants:
    def test_ranges(self, seed):
        f = features.extract_hcf(*synth(seed, **LEAVES[seed]))
        d = dict(zip(HCF_NAMES, f))
        assert f.shape == (HCF_DIM,) and np.isfinite(f).all()
        assert d["ovality"] >= 1
        assert 0 < d["solidity"] <= 1 and 0 < d["extent"] <= 1
        assert d["corner_count"] >= 0 and float(d["corner_count"]).is_integer()
        radii = f[list(GROUPS["A"])]
        assert radii.max() == 1 and radii.min() > 0
        assert 0 <= d["mean"] <= 1 and 0 <= d["std_dev"] <= 0.5
        assert -1 <= d["correlation"] <= 1

    def test_translation(self, seed):
        mask, gray = synth(seed, **LEAVES[seed])
        a = features.extract_hcf(mask, gray)
        shift = (5, -7)
        b = features.extract_hcf(np.roll(mask, shift, axis=(0, 1)), np.roll(gray, shift, axis=(0, 1)))
        np.testing.assert_allclose(a, b, rtol=1e-9, atol=1e-12)

    def test_quarter_turn_shape_features(self, seed):
        mask, gray = synth(seed, **LEAVES[seed])
        a = dict(zip(HCF_NAMES, features.extract_hcf(mask, gray)))
        b = dict(zip(HCF_NAMES, features.extract_hcf(np.rot90(mask), np.rot90(gray))))
        for name in ("area_per_length", "solidity", "equi_diameter", "extent", "corner_count", "mean", "std_dev"):
            assert b[name] == pytest.approx(a[name], rel=1e-9), name
        assert b["ovality"] == pytest.approx(a["ovality"], rel=1e-6)
        for i in range(1, 5):
            assert b[f"hu_{i}"] == pytest.approx(a[f"hu_{i}"], rel=1e-6, abs=1e-15)

    def test_deterministic(self, seed):
        mask, gray = synth(seed, **LEAVES[seed])
        np.testing.assert_array_equal(features.extract_hcf(mask, gray), features.extract_hcf(mask, gray))


class TestGroups:
    def test_full_is_identity(self):
        f = np.arange(HCF_DIM, dtype=float)
        np.testing.assert_array_equal(features.group_subset(f, "ABCD"), f)
        np.testing.assert_array_equal(features.group_subset(f, ["D", "C", "B", "A"]), f)

    def test_b(self):
        f = np.arange(HCF_DIM, dtype=float)
        out = features.group_subset(f, "B")
        assert [HCF_NAMES[int(i)] for i in out] == [f"convexity_{i}" for i in range(4)] + [f"hu_{i}" for i in range(1, 5)]

    def test_sizes(self):
        sizes = {g: len(features.group_subset(np.zeros(HCF_DIM), g)) for g in "ABCD"}
        assert sizes == {"A": 36, "B": 8, "C": 6, "D": 6}
        assert features.group_subset(np.zeros(HCF_DIM), "CD").shape == (12,)

    def test_partition(self):
        all_idx = sorted(i for g in GROUPS.values() for i in g)
        assert all_idx == list(range(HCF_DIM))

    def test_matrix_and_errors(self):
        x = np.zeros((3, HCF_DIM))
        assert features.group_subset(x, "A+C").shape == (3, 42)
        with pytest.raises(ValueError):
            features.group_subset(x, "E")
        with pytest.raises(ValueError):
            features.group_subset(x, "")
        with pytest.raises(ValueError):
            features.group_subset(np.zeros(55), "A")
