"""Image representation, PNG I/O, and full-reference quality metrics.

Images are plain numpy arrays of shape (H, W, C), C in {1, 3}, float64,
with every value in [0, 1]. `new_image` is the canonical constructor:
it validates shape and clamps. All public operations in the package
return images in this form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image as _PILImage, UnidentifiedImageError
from scipy.ndimage import correlate1d

# Reported instead of infinity when two images are identical, so CSV
# reports stay numeric. Any real pair of distinct 8-bit images scores
# far below this.
PSNR_IDENTICAL = 300.0

LUMA_WEIGHTS = (0.299, 0.587, 0.114)

_SSIM_WINDOW = 11
_SSIM_SIGMA = 1.5
_SSIM_C1 = 0.01 ** 2
_SSIM_C2 = 0.03 ** 2


class ImageError(ValueError):
    """Unreadable file, unsupported PNG flavor, or malformed image data."""


def new_image(data) -> np.ndarray:
    """Validate and clamp raw data into canonical (H, W, C) float64 form.

    A 2-d array is treated as single-channel. Values are clamped to [0, 1];
    non-finite data is rejected.
    """
    arr = np.asarray(data, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    if arr.ndim != 3 or arr.shape[2] not in (1, 3):
        raise ImageError(f"expected (H, W) or (H, W, 1|3) data, got shape {arr.shape}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ImageError(f"empty image of shape {arr.shape}")
    if not np.isfinite(arr).all():
        raise ImageError("image data contains non-finite values")
    return np.clip(arr, 0.0, 1.0)


def load_image(path) -> np.ndarray:
    """Load an 8-bit grayscale or RGB PNG as a [0, 1] image."""
    try:
        with _PILImage.open(path) as im:
            mode = im.mode
            if mode not in ("L", "RGB"):
                raise ImageError(
                    f"{path}: unsupported PNG mode {mode!r}; only 8-bit grayscale (L) and RGB are accepted"
                )
            arr = np.asarray(im, dtype=np.uint8)
    except UnidentifiedImageError as exc:
        raise ImageError(f"{path}: not a decodable image file") from exc
    return new_image(arr.astype(np.float64) / 255.0)


def save_image(img: np.ndarray, path) -> None:
    """Write an image as an 8-bit PNG (nearest-byte quantization)."""
    img = new_image(img)
    raw = np.round(img * 255.0).astype(np.uint8)
    if img.shape[2] == 1:
        pil = _PILImage.fromarray(raw[:, :, 0], mode="L")
    else:
        pil = _PILImage.fromarray(raw, mode="RGB")
    pil.save(path, format="PNG")


def luma(img: np.ndarray) -> np.ndarray:
    """(H, W) luminance plane: 0.299 R + 0.587 G + 0.114 B, identity for gray."""
    if img.shape[2] == 1:
        return img[:, :, 0]
    w = np.asarray(LUMA_WEIGHTS, dtype=img.dtype)
    return img @ w


def to_grayscale(img: np.ndarray) -> np.ndarray:
    """Single-channel version of an image; 1-channel input passes through."""
    img = new_image(img)
    if img.shape[2] == 1:
        return img.copy()
    return new_image(luma(img))


def _check_same_shape(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise ImageError(f"shape mismatch: {a.shape} vs {b.shape}")


def psnr(a: np.ndarray, b: np.ndarray) -> float:
    """Peak signal-to-noise ratio in dB on the [0, 1] range.

    MSE is taken over every sample (all pixels, all channels). Identical
    inputs return PSNR_IDENTICAL rather than infinity.
    """
    a = new_image(a)
    b = new_image(b)
    _check_same_shape(a, b)
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return PSNR_IDENTICAL
    return 10.0 * math.log10(1.0 / mse)


def _gaussian_kernel(size: int, sigma: float) -> np.ndarray:
    x = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    k = np.exp(-(x * x) / (2.0 * sigma * sigma))
    return k / k.sum()


def _windowed(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(plane, kernel, axis=0, mode="nearest")
    out = correlate1d(out, kernel, axis=1, mode="nearest")
    r = (len(kernel) - 1) // 2
    return out[r:-r, r:-r]


def ssim(a: np.ndarray, b: np.ndarray) -> float:
    """Mean local SSIM, 11x11 Gaussian window (sigma 1.5), Wang constants.

    Color inputs are compared on luma. The local map is evaluated at
    positions whose window lies fully inside the image, so both images
    must be at least 11x11.
    """
    a = new_image(a)
    b = new_image(b)
    _check_same_shape(a, b)
    h, w = a.shape[:2]
    if h < _SSIM_WINDOW or w < _SSIM_WINDOW:
        raise ImageError(f"ssim needs at least {_SSIM_WINDOW}x{_SSIM_WINDOW} images, got {h}x{w}")
    x = luma(a)
    y = luma(b)
    k = _gaussian_kernel(_SSIM_WINDOW, _SSIM_SIGMA)
    mu_x = _windowed(x, k)
    mu_y = _windowed(y, k)
    xx = _windowed(x * x, k) - mu_x * mu_x
    yy = _windowed(y * y, k) - mu_y * mu_y
    xy = _windowed(x * y, k) - mu_x * mu_y
    num = (2.0 * mu_x * mu_y + _SSIM_C1) * (2.0 * xy + _SSIM_C2)
    den = (mu_x * mu_x + mu_y * mu_y + _SSIM_C1) * (xx + yy + _SSIM_C2)
    return float(np.mean(num / den))


@dataclass(frozen=True)
class MetricReport:
    """Full-reference scores for one image pair."""

    psnr: float
    ssim: float


def compare(a: np.ndarray, b: np.ndarray) -> MetricReport:
    return MetricReport(psnr=psnr(a, b), ssim=ssim(a, b))
