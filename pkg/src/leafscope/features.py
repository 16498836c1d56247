"""The 56-dimensional hand-crafted leaf feature vector."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from leafscope import geometry


class FeatureError(ValueError):
    """Raised when a feature is undefined for the given leaf; names the feature."""

    def __init__(self, feature: str, reason: str):
        super().__init__(f"{feature}: {reason}")
        self.feature = feature


HCF_NAMES: tuple[str, ...] = (
    ("ovality", "area_per_length")
    + tuple(f"convexity_{i}" for i in range(4))
    + ("solidity", "equi_diameter", "extent")
    + ("correlation", "contrast", "entropy", "energy", "std_dev", "mean")
    + ("corner_count",)
    + tuple(f"hu_{i}" for i in range(1, 5))
    + tuple(f"radius_{i}" for i in range(36))
)
HCF_DIM = len(HCF_NAMES)
assert HCF_DIM == 56

_at = HCF_NAMES.index
GROUPS: dict[str, tuple[int, ...]] = {
    "A": tuple(range(_at("radius_0"), _at("radius_0") + 36)),
    "B": tuple(range(_at("convexity_0"), _at("convexity_0") + 4)) + tuple(range(_at("hu_1"), _at("hu_1") + 4)),
    "C": tuple(_at(k) for k in ("ovality", "area_per_length", "solidity", "equi_diameter", "extent", "corner_count")),
    "D": tuple(_at(k) for k in ("correlation", "contrast", "entropy", "energy", "std_dev", "mean")),
}


@dataclass(frozen=True)
class FeatureConfig:
    glcm_levels: int = 32
    harris_k: float = 0.04
    harris_threshold: float = 0.01
    defect_min_depth: float = 1.0


def build_glcm(img: np.ndarray, mask: np.ndarray | None = None, levels: int = 32) -> np.ndarray:
    """Normalized co-occurrence matrix for displacement (dx=1, dy=0).

    Only ordered pairs whose two pixels are both inside ``mask`` count.
    """
    g = np.asarray(img).astype(np.int64)
    m = np.ones(g.shape, dtype=bool) if mask is None else np.asarray(mask, dtype=bool)
    q = g * levels // 256
    valid = m[:, :-1] & m[:, 1:]
    left, right = q[:, :-1][valid], q[:, 1:][valid]
    if left.size == 0:
        raise FeatureError("glcm", "GLCM undefined: no horizontally adjacent mask pixels")
    counts = np.bincount(left * levels + right, minlength=levels * levels).reshape(levels, levels)
    return counts / counts.sum()


def glcm_stats(p: np.ndarray) -> tuple[float, float, float, float]:
    """``(correlation, contrast, entropy, energy)`` of a normalized GLCM; entropy in bits."""
    p = np.asarray(p, dtype=np.float64)
    i, j = np.indices(p.shape)
    contrast = float(((i - j) ** 2 * p).sum())
    energy = float((p * p).sum())
    nz = p[p > 0]
    entropy = float(-(nz * np.log2(nz)).sum())
    mu_i, mu_j = float((i * p).sum()), float((j * p).sum())
    var_i = float(((i - mu_i) ** 2 * p).sum())
    var_j = float(((j - mu_j) ** 2 * p).sum())
    if var_i <= 0 or var_j <= 0:
        correlation = 0.0
    else:
        correlation = float(((i - mu_i) * (j - mu_j) * p).sum()) / math.sqrt(var_i * var_j)
    return correlation, contrast, entropy, energy


def intensity_stats(img: np.ndarray, mask: np.ndarray) -> tuple[float, float]:
    """``(mean, population std)`` of mask pixels on the [0, 1] gray scale."""
    vals = np.asarray(img, dtype=np.float64)[np.asarray(mask, dtype=bool)]
    if vals.size == 0:
        raise FeatureError("intensity", "empty mask")
    vals = vals / 255.0
    return float(vals.mean()), float(vals.std())


def normalized_leaf(gray: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Min-max normalized gray values on the mask, zero elsewhere.

    A constant-gray leaf maps to 1 on the mask so its shape still carries mass.
    """
    m = np.asarray(mask, dtype=bool)
    g = np.asarray(gray, dtype=np.float64)
    out = np.zeros(g.shape)
    vals = g[m]
    lo, hi = vals.min(), vals.max()
    out[m] = 1.0 if hi == lo else (vals - lo) / (hi - lo)
    return out


def convexity_vector(contour: np.ndarray, equi_diameter: float, min_depth: float = 1.0) -> np.ndarray:
    hull = geometry.convex_hull(contour)
    depths = sorted((d.depth for d in geometry.convexity_defects(contour, hull, min_depth)), reverse=True)
    out = np.zeros(4)
    top = np.array(depths[:4], dtype=np.float64)
    out[: len(top)] = top / equi_diameter
    return out


def leaf_region(mask: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Largest contour and the filled region it bounds, in image coordinates."""
    contour = geometry.largest_contour(mask)
    region, (x0, y0) = geometry.fill_contour(contour)
    full = np.zeros(np.asarray(mask).shape, dtype=bool)
    ys, xs = np.nonzero(region)
    ys, xs = ys + y0, xs + x0
    keep = (ys >= 0) & (ys < full.shape[0]) & (xs >= 0) & (xs < full.shape[1])
    full[ys[keep], xs[keep]] = True
    return contour, full


def extract_hcf(mask: np.ndarray, gray: np.ndarray, cfg: FeatureConfig | None = None) -> np.ndarray:
    """Compute the 56 hand-crafted features of a segmented leaf.

    ``gray`` is the 8-bit grayscale aligned with ``mask``. Shape features come
    from the largest contour; texture, intensity, corner and moment features
    are computed over the region that contour bounds, with everything outside
    it treated as white background.
    """
    cfg = cfg or FeatureConfig()
    gray = np.asarray(gray)
    if gray.shape != np.asarray(mask).shape:
        raise ValueError(f"gray {gray.shape} and mask {np.asarray(mask).shape} differ in shape")

    def guarded(name, fn, *args):
        try:
            return fn(*args)
        except FeatureError:
            raise
        except (ValueError, ZeroDivisionError, FloatingPointError) as exc:
            raise FeatureError(name, str(exc)) from exc

    contour, region = guarded("contour", leaf_region, mask)
    area = geometry.contour_area(contour)
    if area <= 0:
        raise FeatureError("area", "leaf contour encloses no area")
    perimeter = geometry.contour_perimeter(contour)
    axes = guarded("ovality", geometry.fit_ellipse_axes, contour)
    hull_area = geometry.contour_area(geometry.convex_hull(contour))
    equi_diameter = math.sqrt(4 * area / math.pi)
    _, _, bw, bh = geometry.bounding_rect(contour)

    glcm = guarded("glcm", build_glcm, gray, region, cfg.glcm_levels)
    correlation, contrast, entropy, energy = glcm_stats(glcm)
    mean, std = intensity_stats(gray, region)
    leaf_on_white = np.where(region, gray, 255)
    corners = geometry.harris_corner_count(leaf_on_white, cfg.harris_k, cfg.harris_threshold)
    hu = guarded("hu_moments", geometry.hu_moments4, normalized_leaf(gray, region))
    radii = guarded("centroid_radii", geometry.centroid_radii, contour)

    values = np.concatenate(
        [
            [axes.ratio, area / perimeter],
            convexity_vector(contour, equi_diameter, cfg.defect_min_depth),
            [area / hull_area, equi_diameter, area / (bw * bh)],
            [correlation, contrast, entropy, energy, std, mean],
            [corners],
            hu,
            radii,
        ]
    )
    assert values.shape == (HCF_DIM,)
    return values


def parse_groups(spec: str | Iterable[str]) -> tuple[str, ...]:
    """Normalize ``"ACD"``, ``"A+C+D"`` or ``["A", "C"]`` into sorted unique group names."""
    if isinstance(spec, str):
        names = [ch for ch in spec.upper() if ch.isalpha()]
    else:
        names = [str(s).upper() for s in spec]
    unknown = set(names) - set(GROUPS)
    if unknown:
        raise ValueError(f"unknown feature groups: {sorted(unknown)}")
    if not names:
        raise ValueError("feature group set must not be empty")
    return tuple(sorted(set(names)))


def group_indices(groups: str | Iterable[str]) -> np.ndarray:
    # union kept in vector order, so the full set is the identity selection
    return np.array(sorted(i for g in parse_groups(groups) for i in GROUPS[g]), dtype=int)


def group_subset(f: np.ndarray, groups: str | Iterable[str]) -> np.ndarray:
    """Select the requested groups' columns (1-D vector or row-stacked 2-D input)."""
    f = np.asarray(f)
    if f.shape[-1] != HCF_DIM:
        raise ValueError(f"expected {HCF_DIM}-dim hand-crafted features, got {f.shape[-1]}")
    return f[..., group_indices(groups)]
