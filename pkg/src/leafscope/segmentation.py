"""Background elimination and stem removal.

The pipeline in :func:`segment_leaf` clusters the resized image in an
8-bit-encoded Lab plane (two clusters), picks the cluster that owns less of
the frame border, intersects it with an inverse-Otsu mask of the blurred
grayscale and fills holes. :func:`remove_stem` is a separate opening step.
"""
from __future__ import annotations

import enum
from fractions import Fraction
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from leafscope import raster


class SegmentationError(ValueError):
    pass


class Plane(str, enum.Enum):
    AB = "AB"
    LA = "LA"


class Verdict(str, enum.Enum):
    OK = "ok"
    WIPED_OUT = "wiped_out"
    BACKGROUND_RESIDUE = "background_residue"


@dataclass(frozen=True)
class SegmentationConfig:
    a_threshold: float = 128.0
    kmeans_iterations: int = 3
    blur_sigma: float = 1.0
    opening_kernel: tuple[int, int] = (9, 9)
    resize_target: int = 256
    rng_seed: int = 0
    # verdict thresholds
    wiped_fraction: float = 0.01
    residue_fraction: float = 0.90
    residue_border_fraction: float = 0.30

    def __post_init__(self):
        if self.kmeans_iterations < 1:
            raise ValueError("kmeans_iterations must be >= 1")
        kh, kw = self.opening_kernel
        if kh < 1 or kw < 1 or kh % 2 == 0 or kw % 2 == 0:
            raise ValueError(f"opening_kernel must be odd and positive, got {self.opening_kernel}")
        if self.resize_target < 1:
            raise ValueError("resize_target must be >= 1")
        if self.blur_sigma <= 0:
            raise ValueError("blur_sigma must be > 0")


@dataclass(frozen=True)
class SegmentationReport:
    leaf_area_fraction: float
    border_leaf_fraction: float
    verdict: Verdict


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    # objective after every assignment, one entry per iteration
    objective: list[float] = field(default_factory=list)


def select_plane(lab: np.ndarray, cfg: SegmentationConfig) -> Plane:
    """AB when the mean 8-bit A value is strictly above the threshold, else LA."""
    a_mean = float(np.mean(lab[..., 1] + 128.0))
    return Plane.AB if a_mean > cfg.a_threshold else Plane.LA


def plane_points(lab: np.ndarray, plane: Plane) -> np.ndarray:
    enc = raster.lab_to_8bit(lab)
    idx = (1, 2) if plane is Plane.AB else (0, 1)
    return enc[..., idx].reshape(-1, 2)


def _initial_centroids(points: np.ndarray) -> np.ndarray:
    order = np.argsort(points[:, 0], kind="stable")
    n = len(points)
    lo = points[order[int(round(0.05 * (n - 1)))]]
    hi = points[order[int(round(0.95 * (n - 1)))]]
    if np.array_equal(lo, hi):
        far = np.argmax(((points - lo) ** 2).sum(axis=1))
        hi = points[far]
    return np.stack([lo, hi]).astype(np.float64)


def _assign(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    d = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
    labels = np.argmin(d, axis=1)
    return labels, d[np.arange(len(points)), labels]


def kmeans2(points: np.ndarray, iterations: int = 3, seed: int | None = None) -> KMeansResult:
    """Two-cluster Lloyd iterations with deterministic percentile seeding.

    ``seed=None`` uses the 5th/95th-percentile points along the first
    coordinate; an integer seed draws two distinct points at random instead.
    Each iteration is one assign + one update; the returned labels are the
    nearest-centroid assignment under the final centroids.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if len(pts) < 2 or np.all(pts == pts[0]):
        raise SegmentationError("degenerate input, clustering impossible")
    if iterations < 1:
        raise ValueError("iterations must be >= 1")

    if seed is None:
        centroids = _initial_centroids(pts)
    else:
        rng = np.random.default_rng(seed)
        first = pts[rng.integers(len(pts))]
        distinct = np.flatnonzero(np.any(pts != first, axis=1))
        centroids = np.stack([first, pts[rng.choice(distinct)]])

    objective = []
    for _ in range(iterations):
        labels, dist = _assign(pts, centroids)
        objective.append(float(dist.sum()))
        for k in (0, 1):
            members = pts[labels == k]
            if len(members):
                centroids[k] = members.mean(axis=0)
    labels, dist = _assign(pts, centroids)
    objective.append(float(dist.sum()))
    return KMeansResult(labels=labels.astype(np.uint8), centroids=centroids, objective=objective)


def border_pixels(arr: np.ndarray) -> np.ndarray:
    """Values on the one-pixel frame of a 2-D array, each pixel once."""
    if arr.shape[0] <= 2 or arr.shape[1] <= 2:
        return arr.ravel()
    return np.concatenate([arr[0], arr[-1], arr[1:-1, 0], arr[1:-1, -1]])


def pick_leaf_cluster(labels: np.ndarray) -> int:
    """Cluster owning the smaller share of the frame border.

    Ties go to the cluster with smaller total area; an empty cluster is
    never chosen.
    """
    labels = np.asarray(labels)
    frame = border_pixels(labels)
    area = [int(np.count_nonzero(labels == k)) for k in (0, 1)]
    if area[0] == 0:
        return 1
    if area[1] == 0:
        return 0
    share = [np.count_nonzero(frame == k) for k in (0, 1)]
    if share[0] != share[1]:
        return 0 if share[0] < share[1] else 1
    return 0 if area[0] <= area[1] else 1


def between_class_scores(hist: np.ndarray) -> list[Fraction]:
    """Exact between-class variance (up to a positive constant) per threshold.

    Class 0 holds values ``<= t``. Scores are exact rationals so that the
    argmax is reproducible bit for bit; thresholds leaving a class empty
    score zero.
    """
    hist = [int(v) for v in hist]
    n = sum(hist)
    total = sum(i * c for i, c in enumerate(hist))
    scores = []
    n0 = s0 = 0
    for t, c in enumerate(hist):
        n0 += c
        s0 += t * c
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            scores.append(Fraction(0))
            continue
        # w0*w1*(mu0-mu1)^2 == (n*s0 - n0*total)^2 / (n0*n1*n^2)
        scores.append(Fraction((n * s0 - n0 * total) ** 2, n0 * n1))
    return scores


def otsu_threshold(img: np.ndarray) -> int:
    """Otsu threshold over the 256-bin histogram; lowest argmax on ties."""
    gray = np.asarray(img)
    hist = np.bincount(gray.astype(np.int64).ravel(), minlength=256)[:256]
    if np.count_nonzero(hist) < 2:
        raise SegmentationError("no threshold exists: image has a single gray value")
    scores = between_class_scores(hist)
    best = max(scores)
    return scores.index(best)


def binarize_inverse(img: np.ndarray, t: int) -> np.ndarray:
    if not 0 <= t <= 255:
        raise ValueError(f"threshold must be in [0, 255], got {t}")
    return np.asarray(img) <= t


def fill_holes(mask: np.ndarray) -> np.ndarray:
    """Set every false region not 4-connected to the border to true."""
    return ndimage.binary_fill_holes(np.asarray(mask, dtype=bool))


def ellipse_kernel(size: tuple[int, int] = (9, 9)) -> np.ndarray:
    """Filled discrete ellipse inscribed in an odd ``(height, width)`` grid."""
    h, w = size
    ry, rx = (h - 1) / 2, (w - 1) / 2
    y, x = np.mgrid[-ry : ry + 1, -rx : rx + 1]
    sy = (y / ry) ** 2 if ry else np.where(y == 0, 0.0, np.inf)
    sx = (x / rx) ** 2 if rx else np.where(x == 0, 0.0, np.inf)
    return (sy + sx) <= 1.0


def remove_stem(mask: np.ndarray, kernel: tuple[int, int] = (9, 9)) -> np.ndarray:
    """Morphological opening with an elliptical structuring element.

    Pixels outside the frame count as background, so the result is exactly
    the planar opening of the mask and therefore idempotent.
    """
    se = ellipse_kernel(kernel)
    m = np.asarray(mask, dtype=bool)
    if not m.any():
        return m.copy()
    eroded = ndimage.binary_erosion(m, structure=se, border_value=0)
    return ndimage.binary_dilation(eroded, structure=se, border_value=0)


def judge_segmentation(mask: np.ndarray, cfg: SegmentationConfig | None = None) -> SegmentationReport:
    cfg = cfg or SegmentationConfig()
    m = np.asarray(mask, dtype=bool)
    area = float(m.mean()) if m.size else 0.0
    border = float(border_pixels(m).mean()) if m.size else 0.0
    if area < cfg.wiped_fraction:
        verdict = Verdict.WIPED_OUT
    elif area > cfg.residue_fraction or border > cfg.residue_border_fraction:
        verdict = Verdict.BACKGROUND_RESIDUE
    else:
        verdict = Verdict.OK
    return SegmentationReport(area, border, verdict)


def apply_mask(img: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Copy of ``img`` with non-leaf pixels painted white."""
    out = np.array(img, copy=True)
    out[~np.asarray(mask, dtype=bool)] = 255
    return out


@dataclass
class Segmentation:
    mask: np.ndarray
    masked: np.ndarray
    report: SegmentationReport
    resized: np.ndarray
    plane: Plane | None = None


def segment_leaf(img: np.ndarray, cfg: SegmentationConfig | None = None) -> Segmentation:
    """Background elimination of a leaf photographed on a plain background."""
    cfg = cfg or SegmentationConfig()
    small = raster.resize_longest_edge(raster.check_rgb(img), cfg.resize_target)
    lab = raster.rgb_to_lab(small)
    plane = select_plane(lab, cfg)
    h, w = small.shape[:2]
    try:
        km = kmeans2(plane_points(lab, plane), cfg.kmeans_iterations)
        gray = raster.gaussian_blur(raster.to_grayscale(small), cfg.blur_sigma)
        t = otsu_threshold(gray)
    except SegmentationError:
        empty = np.zeros((h, w), dtype=bool)
        return Segmentation(empty, apply_mask(small, empty), judge_segmentation(empty, cfg), small, plane)

    labels = km.labels.reshape(h, w)
    cluster = labels == pick_leaf_cluster(labels)
    mask = fill_holes(binarize_inverse(gray, t) & cluster)
    return Segmentation(mask, apply_mask(small, mask), judge_segmentation(mask, cfg), small, plane)
