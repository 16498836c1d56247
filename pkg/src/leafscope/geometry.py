"""Contour-level shape machinery used by the hand-crafted features.

Contours are ``(n, 2)`` integer arrays of ``(x, y)`` pixel coordinates with
``y`` growing downwards. They are closed (the last point connects to the
first) and oriented so that the shoelace signed area is positive, which is
counterclockwise in a y-up frame and clockwise as displayed on screen.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from leafscope import raster


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class EllipseAxes:
    semi_major: float
    semi_minor: float

    @property
    def ratio(self) -> float:
        return self.semi_major / self.semi_minor


@dataclass(frozen=True)
class ConvexityDefect:
    start_index: int
    end_index: int
    farthest_index: int
    depth: float


# clockwise on screen (y down), starting east
_DIRS = np.array([(1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1)])
_DIR_INDEX = {(int(dx), int(dy)): i for i, (dx, dy) in enumerate(_DIRS)}
_WEST = 4


def _trace_one(region: np.ndarray, start: tuple[int, int]) -> np.ndarray:
    """Moore-neighbour border following of one 8-connected region."""
    h, w = region.shape

    def inside(x, y):
        return 0 <= x < w and 0 <= y < h and region[y, x]

    def step(p, back):
        # scan clockwise starting just after the backtrack direction
        for off in range(1, 8):
            d = (back + off) % 8
            q = (p[0] + _DIRS[d][0], p[1] + _DIRS[d][1])
            if inside(*q):
                prev = _DIRS[(d - 1) % 8]
                c = (p[0] + prev[0], p[1] + prev[1])
                return q, _DIR_INDEX[(c[0] - q[0], c[1] - q[1])]
        return None, back

    first, back = step(start, _WEST)
    if first is None:
        return np.array([start])
    points = [start]
    p = first
    while True:
        nxt, back = step(p, back)
        if p == start and nxt == first:
            break
        points.append(p)
        p = nxt
    return np.array(points)


def signed_area(points: np.ndarray) -> float:
    pts = np.asarray(points, dtype=np.float64)
    if len(pts) < 3:
        return 0.0
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def trace_contours(mask: np.ndarray) -> list[np.ndarray]:
    """Outer contours of every 8-connected true region, in raster order of their first pixel."""
    m = np.asarray(mask, dtype=bool)
    labels, count = ndimage.label(m, structure=np.ones((3, 3), dtype=bool))
    if count == 0:
        raise GeometryError("no contour found: mask is empty")
    contours = []
    for sl, k in zip(ndimage.find_objects(labels), range(1, count + 1)):
        sub = labels[sl] == k
        ys, xs = np.nonzero(sub[:1])
        start = (int(xs[0]), 0)
        c = _trace_one(sub, start) + np.array([sl[1].start, sl[0].start])
        if signed_area(c) < 0:
            c = c[::-1]
        contours.append(c)
    return contours


def largest_contour(mask: np.ndarray) -> np.ndarray:
    contours = trace_contours(mask)
    areas = [contour_area(c) for c in contours]
    lengths = [len(c) for c in contours]
    best = max(range(len(contours)), key=lambda i: (areas[i], lengths[i]))
    return contours[best]


def contour_area(c: np.ndarray) -> float:
    """Shoelace area of the closed polygon through the contour points."""
    return abs(signed_area(c))


def contour_perimeter(c: np.ndarray) -> float:
    pts = np.asarray(c, dtype=np.float64)
    if len(pts) < 2:
        return 0.0
    seg = np.roll(pts, -1, axis=0) - pts
    return float(np.hypot(seg[:, 0], seg[:, 1]).sum())


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def convex_hull(c: np.ndarray) -> np.ndarray:
    """Hull vertices (monotone chain), positively oriented, collinear points dropped."""
    pts = sorted({(int(x), int(y)) for x, y in np.asarray(c)})
    if len(pts) <= 2:
        return np.array(pts)
    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if signed_area(hull) < 0:
        hull = hull[::-1]
    return hull


def convexity_defects(c: np.ndarray, hull: np.ndarray, min_depth: float = 1.0) -> list[ConvexityDefect]:
    """One defect per hull edge whose contour arc sinks at least ``min_depth`` below it."""
    c = np.asarray(c)
    n = len(c)
    index_of = {}
    for i, (x, y) in enumerate(c):
        index_of.setdefault((int(x), int(y)), i)
    idx = sorted(index_of[(int(x), int(y))] for x, y in hull)
    defects = []
    for a, b in zip(idx, idx[1:] + idx[:1]):
        span = (b - a) % n
        if span < 2:
            continue
        arc = (a + np.arange(1, span)) % n
        p0, p1 = c[a].astype(np.float64), c[b].astype(np.float64)
        edge = p1 - p0
        length = math.hypot(*edge)
        if length == 0:
            continue
        rel = c[arc].astype(np.float64) - p0
        dist = np.abs(edge[0] * rel[:, 1] - edge[1] * rel[:, 0]) / length
        j = int(np.argmax(dist))
        if dist[j] >= min_depth:
            defects.append(ConvexityDefect(a, b, int(arc[j]), float(dist[j])))
    return defects


def fill_contour(c: np.ndarray) -> tuple[np.ndarray, tuple[int, int]]:
    """Filled region bounded by a contour, as ``(mask, (x0, y0))`` with the mask's origin."""
    pts = np.asarray(c)
    x0, y0 = pts.min(axis=0) - 1
    x1, y1 = pts.max(axis=0) + 1
    m = np.zeros((y1 - y0 + 1, x1 - x0 + 1), dtype=bool)
    m[pts[:, 1] - y0, pts[:, 0] - x0] = True
    return ndimage.binary_fill_holes(m), (int(x0), int(y0))


def fit_ellipse_axes(c: np.ndarray) -> EllipseAxes:
    """Equivalent-ellipse semi-axes from the second central moments of the filled region."""
    region, _ = fill_contour(c)
    ys, xs = np.nonzero(region)
    if len(xs) < 3:
        raise GeometryError("ellipse undefined: degenerate region")
    cov = np.cov(np.stack([xs, ys]).astype(np.float64), bias=True)
    evals = np.linalg.eigvalsh(cov)
    if evals[0] <= 1e-12:
        raise GeometryError("ellipse undefined: region has zero extent along one axis")
    return EllipseAxes(2 * math.sqrt(evals[1]), 2 * math.sqrt(evals[0]))


def bounding_rect(c: np.ndarray) -> tuple[int, int, int, int]:
    """``(x, y, width, height)`` with inclusive pixel extents."""
    pts = np.asarray(c)
    x0, y0 = pts.min(axis=0)
    x1, y1 = pts.max(axis=0)
    return int(x0), int(y0), int(x1 - x0 + 1), int(y1 - y0 + 1)


def central_moments(img: np.ndarray, order: int = 3) -> tuple[float, np.ndarray]:
    """Mass and central moments ``mu[p, q]`` for ``p + q <= order``."""
    f = np.asarray(img, dtype=np.float64)
    m00 = float(f.sum())
    if m00 <= 0:
        raise GeometryError("moments undefined: image has no mass")
    ys, xs = np.mgrid[: f.shape[0], : f.shape[1]]
    xc = float((xs * f).sum()) / m00
    yc = float((ys * f).sum()) / m00
    dx, dy = xs - xc, ys - yc
    mu = np.zeros((order + 1, order + 1))
    for p in range(order + 1):
        for q in range(order + 1 - p):
            mu[p, q] = float((dx**p * dy**q * f).sum())
    return m00, mu


def hu_moments4(img: np.ndarray) -> np.ndarray:
    """First four Hu invariants of an intensity image."""
    m00, mu = central_moments(img)

    def eta(p, q):
        return mu[p, q] / m00 ** (1 + (p + q) / 2)

    n20, n02, n11 = eta(2, 0), eta(0, 2), eta(1, 1)
    n30, n03, n21, n12 = eta(3, 0), eta(0, 3), eta(2, 1), eta(1, 2)
    return np.array(
        [
            n20 + n02,
            (n20 - n02) ** 2 + 4 * n11**2,
            (n30 - 3 * n12) ** 2 + (3 * n21 - n03) ** 2,
            (n30 + n12) ** 2 + (n21 + n03) ** 2,
        ]
    )


_SOBEL_X = np.array([[-1, 0, 1], [-2, 0, 2], [-1, 0, 1]], dtype=np.int64)


def _correlate_int(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    ry, rx = kernel.shape[0] // 2, kernel.shape[1] // 2
    f = np.pad(img, ((ry, ry), (rx, rx)), mode="edge")
    h, w = img.shape
    out = np.zeros((h, w), dtype=np.int64)
    for i in range(kernel.shape[0]):
        for j in range(kernel.shape[1]):
            if kernel[i, j]:
                out += kernel[i, j] * f[i : i + h, j : j + w]
    return out


def harris_response(img: np.ndarray, k: float = 0.04, sigma: float = 1.0) -> np.ndarray:
    """Harris response ``det(M) - k trace(M)^2`` of an 8-bit gray image.

    Gradients and the Gaussian-weighted tensor sums are accumulated in
    integers (the window uses fixed-point weights), so the response is
    bit-identical under quarter-turn rotations and mirror flips.
    """
    g = np.rint(np.asarray(img, dtype=np.float64)).astype(np.int64)
    ix = _correlate_int(g, _SOBEL_X)
    iy = _correlate_int(g, _SOBEL_X.T)
    win = np.rint(raster.gaussian_kernel(sigma) * 4096).astype(np.int64)
    win2 = np.outer(win, win)
    scale = float(win2.sum())
    sxx = _correlate_int(ix * ix, win2) / scale
    syy = _correlate_int(iy * iy, win2) / scale
    sxy = _correlate_int(ix * iy, win2) / scale
    return sxx * syy - sxy * sxy - k * (sxx + syy) ** 2


def harris_corner_count(
    img: np.ndarray, k: float = 0.04, rel_threshold: float = 0.01, sigma: float = 1.0
) -> int:
    """Local maxima (3x3) of the Harris response above ``rel_threshold * max``."""
    r = harris_response(img, k, sigma)
    peak = float(r.max())
    if peak <= 0:
        return 0
    local_max = r == ndimage.maximum_filter(r, size=3, mode="nearest")
    return int(np.count_nonzero(local_max & (r > rel_threshold * peak)))


def centroid_radii(c: np.ndarray, n: int = 36) -> np.ndarray:
    """Normalized centroid distances at ``n`` equal arc-length steps along the contour.

    Sampling starts at the contour point whose bearing from the centroid is
    closest to 0 degrees (ties: larger radius) and follows the contour's
    own orientation.
    """
    pts = np.asarray(c, dtype=np.float64)
    if len(pts) < 3 or contour_area(pts) <= 0:
        raise GeometryError("centroid-radii undefined: degenerate contour")
    center = pts.mean(axis=0)
    rel = pts - center
    angle = np.abs(np.arctan2(rel[:, 1], rel[:, 0]))
    radius = np.hypot(rel[:, 0], rel[:, 1])
    start = int(np.lexsort((-radius, angle))[0])
    ring = np.roll(pts, -start, axis=0)
    closed = np.vstack([ring, ring[:1]])
    seg = np.hypot(*np.diff(closed, axis=0).T)
    arc = np.concatenate([[0.0], np.cumsum(seg)])
    s = np.arange(n) * (arc[-1] / n)
    x = np.interp(s, arc, closed[:, 0])
    y = np.interp(s, arc, closed[:, 1])
    d = np.hypot(x - center[0], y - center[1])
    return d / d.max()
