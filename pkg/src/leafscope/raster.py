"""Pixel substrate: loading, color conversion, resizing, blur and rotation.

Images are plain numpy arrays:

* RGB raster  -- ``(H, W, 3)`` ``uint8``
* gray        -- ``(H, W)`` ``uint8``
* Lab         -- ``(H, W, 3)`` ``float64`` with L in [0, 100], a/b roughly [-128, 127]
"""
from __future__ import annotations

import math
import os

import numpy as np
from PIL import Image, UnidentifiedImageError

# D65 reference white, XYZ scaled so that Y = 1
_D65 = np.array([0.95047, 1.0, 1.08883])
_SRGB_TO_XYZ = np.array(
    [
        [0.4124564, 0.3575761, 0.1804375],
        [0.2126729, 0.7151522, 0.0721750],
        [0.0193339, 0.1191920, 0.9503041],
    ]
)
_LUMA_601 = np.array([0.299, 0.587, 0.114])


class ImageError(ValueError):
    """Raised when an image file cannot be read or decoded."""


def check_rgb(img: np.ndarray) -> np.ndarray:
    img = np.asarray(img)
    if img.ndim != 3 or img.shape[2] != 3 or img.shape[0] < 1 or img.shape[1] < 1:
        raise ValueError(f"expected an (H, W, 3) image, got shape {img.shape}")
    return img


def load_image(path: str | os.PathLike) -> np.ndarray:
    """Decode a PNG/JPEG (or anything Pillow reads) into an RGB uint8 array."""
    path = os.fspath(path)
    if not os.path.exists(path):
        raise ImageError(f"{path}: file not found")
    try:
        with Image.open(path) as im:
            im.load()
            rgb = im.convert("RGB")
    except (UnidentifiedImageError, OSError) as exc:
        raise ImageError(f"{path}: cannot decode image ({exc})") from exc
    return np.asarray(rgb, dtype=np.uint8).copy()


def save_image(img: np.ndarray, path: str | os.PathLike) -> None:
    Image.fromarray(np.asarray(img, dtype=np.uint8)).save(path, format="PNG")


def resized_shape(height: int, width: int, target: int = 256) -> tuple[int, int]:
    """Output ``(height, width)`` whose longer edge equals ``target``.

    The shorter edge is rounded half-up and never drops below 1.
    """
    if target < 1:
        raise ValueError("target must be >= 1")
    longest = max(height, width)
    if height >= width:
        return target, max(1, math.floor(width * target / longest + 0.5))
    return max(1, math.floor(height * target / longest + 0.5)), target


def _bilinear_axis(n_in: int, n_out: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # half-pixel centers, clamped at the edges
    pos = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    return lo, hi, pos - lo


def resize(img: np.ndarray, height: int, width: int) -> np.ndarray:
    """Bilinear resample of a 2-D or 3-D uint8 image to ``(height, width)``."""
    src = np.asarray(img)
    if src.shape[:2] == (height, width):
        return src.copy()
    y0, y1, fy = _bilinear_axis(src.shape[0], height)
    x0, x1, fx = _bilinear_axis(src.shape[1], width)
    f = src.astype(np.float64)
    if f.ndim == 3:
        fy = fy[:, None, None]
        fx = fx[None, :, None]
    else:
        fy = fy[:, None]
        fx = fx[None, :]
    top = f[y0][:, x0] * (1 - fx) + f[y0][:, x1] * fx
    bottom = f[y1][:, x0] * (1 - fx) + f[y1][:, x1] * fx
    out = top * (1 - fy) + bottom * fy
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def resize_longest_edge(img: np.ndarray, target: int = 256) -> np.ndarray:
    h, w = resized_shape(img.shape[0], img.shape[1], target)
    return resize(img, h, w)


def rgb_to_lab(img: np.ndarray) -> np.ndarray:
    """sRGB (D65) to CIE L*a*b*."""
    rgb = check_rgb(img).astype(np.float64) / 255.0
    linear = np.where(rgb <= 0.04045, rgb / 12.92, ((rgb + 0.055) / 1.055) ** 2.4)
    xyz = linear @ _SRGB_TO_XYZ.T / _D65
    eps, kappa = 216 / 24389, 24389 / 27
    f = np.where(xyz > eps, np.cbrt(xyz), (kappa * xyz + 16) / 116)
    lab = np.empty_like(f)
    lab[..., 0] = 116 * f[..., 1] - 16
    lab[..., 1] = 500 * (f[..., 0] - f[..., 1])
    lab[..., 2] = 200 * (f[..., 1] - f[..., 2])
    # pure black lands a hair off zero through the linear segment
    lab[..., 0] = np.maximum(lab[..., 0], 0.0)
    return lab


def lab_to_8bit(lab: np.ndarray) -> np.ndarray:
    """Encode Lab planes on a 0..255 float scale: L*255/100, a+128, b+128."""
    enc = np.empty_like(lab, dtype=np.float64)
    enc[..., 0] = lab[..., 0] * 255.0 / 100.0
    enc[..., 1] = lab[..., 1] + 128.0
    enc[..., 2] = lab[..., 2] + 128.0
    return enc


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Rec. 601 luma, rounded to the nearest integer."""
    rgb = check_rgb(img).astype(np.float64)
    return np.clip(np.floor(rgb @ _LUMA_601 + 0.5), 0, 255).astype(np.uint8)


def gaussian_kernel(sigma: float) -> np.ndarray:
    if sigma <= 0:
        raise ValueError("sigma must be > 0")
    radius = math.ceil(3 * sigma)
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-(x * x) / (2 * sigma * sigma))
    return k / k.sum()


def convolve_separable(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Float separable convolution with a symmetric 1-D kernel, edge-clamped."""
    r = len(kernel) // 2
    f = np.pad(np.asarray(img, dtype=np.float64), r, mode="edge")
    h, w = f.shape[0] - 2 * r, f.shape[1] - 2 * r
    rows = sum(kernel[i] * f[:, i : i + w] for i in range(len(kernel)))
    return sum(kernel[i] * rows[i : i + h, :] for i in range(len(kernel)))


def gaussian_blur(img: np.ndarray, sigma: float = 1.0) -> np.ndarray:
    """Separable Gaussian blur of a gray image, radius ceil(3 sigma), clamped borders."""
    out = convolve_separable(img, gaussian_kernel(sigma))
    return np.clip(np.floor(out + 0.5), 0, 255).astype(np.uint8)


def rotate_quarter(img: np.ndarray, turns: int) -> np.ndarray:
    """Lossless rotation by ``90 * turns`` degrees (counterclockwise as displayed)."""
    if turns not in (0, 1, 2, 3):
        raise ValueError(f"turns must be in {{0, 1, 2, 3}}, got {turns!r}")
    return np.ascontiguousarray(np.rot90(np.asarray(img), k=turns, axes=(0, 1)))
