import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from leafscope import corpus, features, geometry, raster
from leafscope.geometry import GeometryError

from conftest import disk, ellipse


def square_mask(size=20, x0=5, y0=3, side=10):
    m = np.zeros((size, size), bool)
    m[y0 : y0 + side, x0 : x0 + side] = True
    return m


class TestTraceContours:
    def test_square_border_pixels(self):
        m = square_mask()
        (c,) = geometry.trace_contours(m)
        interior = np.zeros_like(m)
        interior[4:12, 6:14] = True
        expected = {(x, y) for y, x in zip(*np.nonzero(m & ~interior))}
        assert len(c) == 36
        assert {tuple(p) for p in c.tolist()} == expected

    def test_two_blobs(self):
        m = square_mask(30, 2, 2, 6) | square_mask(30, 15, 18, 8)
        assert len(geometry.trace_contours(m)) == 2

    def test_diagonal_touch_is_one_region(self):
        m = np.zeros((6, 6), bool)
        m[1:3, 1:3] = True
        m[3:5, 3:5] = True
        assert len(geometry.trace_contours(m)) == 1

    def test_empty(self):
        with pytest.raises(GeometryError, match="no contour"):
            geometry.trace_contours(np.zeros((5, 5), bool))

    @settings(max_examples=60, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(2, 16), st.integers(2, 16))))
    def test_contour_properties(self, m):
        if not m.any():
            return
        for c in geometry.trace_contours(m):
            # points belong to the mask, steps are 8-adjacent, orientation positive
            assert m[c[:, 1], c[:, 0]].all()
            if len(c) > 1:
                step = np.abs(np.roll(c, -1, axis=0) - c)
                assert step.max() <= 1
            assert geometry.signed_area(c) >= 0

    @settings(max_examples=40, deadline=None)
    @given(arrays(np.bool_, st.tuples(st.integers(3, 20), st.integers(3, 20))))
    def test_area_vs_pixel_count(self, m):
        from scipy import ndimage

        if not m.any():
            return
        filled = ndimage.binary_fill_holes(m)
        labels, _ = ndimage.label(filled, structure=np.ones((3, 3)))
        for c in geometry.trace_contours(m):
            count = (labels == labels[c[0, 1], c[0, 0]]).sum()
            # the pixel-centre polygon misses at most a half-pixel band along the border
            gap = count - geometry.contour_area(c)
            assert 0 <= gap <= geometry.contour_perimeter(c) / 2 + 1 + 1e-9


class TestAreaPerimeter:
    def test_rectangle_polygon(self):
        w, h = 7, 4
        rect = np.array([(0, 0), (w, 0), (w, h), (0, h)])
        assert geometry.contour_area(rect) == w * h
        assert geometry.contour_perimeter(rect) == 2 * (w + h)

    def test_traced_pixel_square(self):
        # pixel-centre polygon of a 10x10 block: 9x9 area, 36 unit steps
        (c,) = geometry.trace_contours(square_mask())
        assert geometry.contour_area(c) == 81
        assert geometry.contour_perimeter(c) == 36

    def test_diagonal_steps(self):
        diamond = np.array([(1, 0), (2, 1), (1, 2), (0, 1)])
        assert geometry.contour_perimeter(diamond) == pytest.approx(4 * math.sqrt(2))
        assert geometry.contour_area(diamond) == 2

    def test_collinear(self):
        assert geometry.contour_area(np.array([(0, 0), (1, 1), (2, 2)])) == 0

    def test_unit_triangle(self):
        assert geometry.contour_area(np.array([(0, 0), (1, 0), (0, 1)])) == 0.5


class TestHull:
    def test_convex_disk(self):
        c = geometry.largest_contour(disk(80, 30))
        hull = geometry.convex_hull(c)
        assert geometry.contour_area(hull) >= geometry.contour_area(c)
        assert geometry.contour_area(c) / geometry.contour_area(hull) > 0.98

    def test_polygon_convex_exact(self):
        pts = np.array([(0, 0), (5, 0), (5, 3), (0, 3)])
        assert geometry.contour_area(geometry.convex_hull(pts)) == geometry.contour_area(pts)

    def test_star(self):
        t = np.linspace(0, 2 * np.pi, 10, endpoint=False)
        r = np.where(np.arange(10) % 2 == 0, 40, 15)
        star = np.rint(np.stack([50 + r * np.cos(t), 50 + r * np.sin(t)], axis=1)).astype(int)
        assert geometry.contour_area(geometry.convex_hull(star)) > geometry.contour_area(star)

    def test_corners_plus_interior(self):
        pts = np.array([(0, 0), (3, 2), (10, 0), (5, 5), (10, 10), (2, 7), (0, 10)])
        hull = geometry.convex_hull(pts)
        assert {tuple(p) for p in hull.tolist()} == {(0, 0), (10, 0), (10, 10), (0, 10)}
        assert geometry.signed_area(hull) > 0


def notched_square(depths, size=100):
    m = np.zeros((size, size), bool)
    m[20:80, 20:80] = True
    ys, xs = np.mgrid[:size, :size]
    for cx, d in depths:
        # triangular notch cut down from the top edge (row 20), half-width 10
        m &= ~((ys >= 20) & (ys < 20 + d - d * np.abs(xs - cx) / 10))
    return m


class TestConvexityDefects:
    def test_convex_has_none(self):
        c = geometry.largest_contour(disk(100, 35))
        assert geometry.convexity_defects(c, geometry.convex_hull(c)) == []

    def test_single_notch(self):
        c = geometry.largest_contour(notched_square([(50, 15)]))
        defects = geometry.convexity_defects(c, geometry.convex_hull(c))
        assert len(defects) == 1
        assert defects[0].depth == pytest.approx(15, abs=1)
        x, y = c[defects[0].farthest_index]
        assert x == 50 and 33 <= y <= 35

    def test_two_notches(self):
        # notches on opposite edges sit under separate hull edges
        m = notched_square([(35, 12)]) & notched_square([(65, 8)])[::-1]
        c = geometry.largest_contour(m)
        depths = sorted(d.depth for d in geometry.convexity_defects(c, geometry.convex_hull(c)))
        assert len(depths) == 2
        assert depths[0] == pytest.approx(8, abs=1) and depths[1] == pytest.approx(12, abs=1)


class TestEllipseAxes:
    def test_disk(self):
        axes = geometry.fit_ellipse_axes(geometry.largest_contour(disk(120, 40)))
        assert axes.semi_major == pytest.approx(40, rel=0.03)
        assert axes.semi_minor == pytest.approx(40, rel=0.03)

    def test_rectangle(self):
        # uniform 2a x 2b rectangle: variances a^2/3, b^2/3 -> ratio a/b
        m = np.zeros((100, 100), bool)
        m[30:70, 10:90] = True  # a = 40, b = 20
        axes = geometry.fit_ellipse_axes(geometry.largest_contour(m))
        assert axes.ratio == pytest.approx(2.0, rel=0.05)
        assert axes.semi_major == pytest.approx(2 * 40 / math.sqrt(3), rel=0.05)

    def test_single_row(self):
        m = np.zeros((10, 20), bool)
        m[4, 2:15] = True
        with pytest.raises(GeometryError, match="ellipse undefined"):
            geometry.fit_ellipse_axes(geometry.largest_contour(m))


class TestBoundingRect:
    def test_points(self):
        assert geometry.bounding_rect(np.array([(2, 3), (10, 7), (5, 5)])) == (2, 3, 9, 5)

    def test_column(self):
        assert geometry.bounding_rect(np.array([(4, 0), (4, 9)]))[2] == 1

    def test_rotated_square(self, rng):
        t = math.radians(30)
        corners = np.array([(-10, -10), (10, -10), (10, 10), (-10, 10)])
        rot = np.rint(corners @ np.array([[math.cos(t), math.sin(t)], [-math.sin(t), math.cos(t)]]) + 50).astype(int)
        x, y, w, h = geometry.bounding_rect(rot)
        assert (x, y) == tuple(rot.min(axis=0))
        assert (x + w - 1, y + h - 1) == tuple(rot.max(axis=0))


def leaf_intensity(seed):
    spec = corpus.LeafSpec(aspect=1.2 + (seed % 5) * 0.3, lobes=seed % 6, lobe_depth=0.05 * (seed % 4), serration=0.02 * (seed % 3))
    img, gt = corpus.synth_leaf(spec, size=128, seed=seed)
    return features.normalized_leaf(raster.to_grayscale(img), gt)


class TestHuMoments:
    def test_disk(self):
        hu = geometry.hu_moments4(disk(160, 70).astype(float))
        assert hu[0] == pytest.approx(1 / (2 * math.pi), rel=0.01)
        assert np.all(np.abs(hu[1:]) < 1e-3)

    @pytest.mark.parametrize("seed", range(5))
    def test_quarter_turn_and_translation(self, seed):
        img = leaf_intensity(seed)
        ref = geometry.hu_moments4(img)
        for k in (1, 2, 3):
            np.testing.assert_allclose(geometry.hu_moments4(np.rot90(img, k)), ref, rtol=1e-9, atol=0)
        shifted = np.pad(img, ((7, 0), (0, 11)))
        np.testing.assert_allclose(geometry.hu_moments4(shifted), ref, rtol=1e-9, atol=0)

    @pytest.mark.parametrize("seed", range(3))
    def test_scale(self, seed):
        img = leaf_intensity(seed)
        big = np.kron(img, np.ones((2, 2)))
        ref, hu = geometry.hu_moments4(img), geometry.hu_moments4(big)
        np.testing.assert_allclose(hu, ref, rtol=0.02)

    def test_zero_mass(self):
        with pytest.raises(GeometryError, match="moments undefined"):
            geometry.hu_moments4(np.zeros((5, 5)))


def rectangle_image():
    img = np.zeros((64, 64), np.uint8)
    img[20:40, 15:45] = 255
    return img


class TestHarris:
    def test_constant(self):
        assert geometry.harris_corner_count(np.full((20, 20), 100, np.uint8)) == 0

    def test_rectangle(self):
        img = rectangle_image()
        r = geometry.harris_response(img)
        peaks = np.argwhere((r == r.max()) | (r > 0.5 * r.max()))
        assert geometry.harris_corner_count(img) == 4
        # every strong response sits within two pixels of a true corner
        corners = np.array([(20, 15), (20, 44), (39, 15), (39, 44)])
        for p in peaks:
            assert np.abs(corners - p).max(axis=1).min() <= 2

    def test_step_edge(self):
        img = np.zeros((30, 30), np.uint8)
        img[:, 15:] = 255
        assert geometry.harris_corner_count(img) == 0

    @pytest.mark.parametrize("seed", range(4))
    def test_rotation_invariant_count(self, seed):
        img, gt = corpus.synth_leaf(corpus.LeafSpec(lobes=seed + 2, lobe_depth=0.2, serration=0.05), size=96, seed=seed)
        gray = np.where(gt, raster.to_grayscale(img), 255)
        n = geometry.harris_corner_count(gray)
        for k in (1, 2, 3):
            assert geometry.harris_corner_count(np.rot90(gray, k)) == n


def ellipse_radii_oracle(a, b, n=36):
    """Analytic ellipse radius at equal arc-length steps from the +x vertex."""
    t = np.linspace(0, 2 * np.pi, 400001)
    x, y = a * np.cos(t), b * np.sin(t)
    s = np.concatenate([[0], np.cumsum(np.hypot(np.diff(x), np.diff(y)))])
    tk = np.interp(np.arange(n) * s[-1] / n, s, t)
    r = np.hypot(a * np.cos(tk), b * np.sin(tk))
    return r / r.max()


class TestCentroidRadii:
    def test_circle(self):
        v = geometry.centroid_radii(geometry.largest_contour(disk(200, 80)))
        assert len(v) == 36 and v.max() == 1.0
        assert v.min() > 0.97

    def test_ellipse(self):
        v = geometry.centroid_radii(geometry.largest_contour(ellipse(256, 100, 50)))
        np.testing.assert_allclose(v, ellipse_radii_oracle(100, 50), atol=0.03)
        # two full oscillations: maxima at samples 0 and 18, minima at 9 and 27
        assert v[0] == pytest.approx(1, abs=0.02) and v[18] == pytest.approx(1, abs=0.02)
        assert v[9] == pytest.approx(0.5, abs=0.02) and v[27] == pytest.approx(0.5, abs=0.02)

    def test_translation(self):
        m = notched_square([(50, 12)])
        a = geometry.centroid_radii(geometry.largest_contour(m))
        b = geometry.centroid_radii(geometry.largest_contour(np.roll(np.roll(m, 9, axis=0), -5, axis=1)))
        np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)

    def test_degenerate(self):
        with pytest.raises(GeometryError):
            geometry.centroid_radii(np.array([(0, 0), (1, 1), (2, 2)]))
