"""Classical filter bank: the 9-entry per-pixel action set and the
smoothers used for frequency decomposition.

All filters accept (H, W) or (H, W, C) float arrays, preserve dtype and
shape, use replicate (edge-clamp) padding, and clamp results to [0, 1].

Window filters are computed as an ordered accumulation over the k*k
offsets (row-major), not as separable passes. That makes the whole-image
result bitwise identical to evaluating the same window at a subset of
pixels, which the deraining step exploits: `masked_action_values` computes
candidate values only at rain pixels and is pixel-exact against the
full-image filters.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# One step of the increment/decrement actions, on the 8-bit scale.
PIXEL_STEP = 1.0 / 255.0

N_ACTIONS = 9

_KINDS = {"box", "gaussian", "median", "bilateral", "increment", "decrement", "identity"}


def _require_odd(kernel: int) -> None:
    if kernel < 1 or kernel % 2 == 0:
        raise ValueError(f"kernel size must be odd and >= 1, got {kernel}")


@dataclass(frozen=True)
class FilterSpec:
    """One action-set entry or decomposition filter."""

    kind: str
    kernel: int = 1
    sigma: float = 0.0
    sigma_c: float = 0.0
    sigma_s: float = 0.0

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown filter kind {self.kind!r}")
        _require_odd(self.kernel)
        if self.kind == "gaussian" and self.sigma <= 0:
            raise ValueError("gaussian filter needs sigma > 0")
        if self.kind == "bilateral" and (self.sigma_c <= 0 or self.sigma_s <= 0):
            raise ValueError("bilateral filter needs sigma_c > 0 and sigma_s > 0")


# Action indices 1..9. Filter actions recompute their output from the
# full current state each step; 7 and 8 nudge the value one 8-bit step.
ACTION_SET: dict[int, FilterSpec] = {
    1: FilterSpec("box", kernel=5),
    2: FilterSpec("bilateral", kernel=5, sigma_c=1.0, sigma_s=5.0),
    3: FilterSpec("bilateral", kernel=5, sigma_c=0.1, sigma_s=5.0),
    4: FilterSpec("median", kernel=5),
    5: FilterSpec("gaussian", kernel=5, sigma=1.5),
    6: FilterSpec("gaussian", kernel=5, sigma=0.5),
    7: FilterSpec("increment"),
    8: FilterSpec("decrement"),
    9: FilterSpec("identity"),
}


def _as_3d(a: np.ndarray):
    a = np.asarray(a)
    if a.ndim == 2:
        return a[:, :, None], True
    if a.ndim == 3:
        return a, False
    raise ValueError(f"expected (H, W) or (H, W, C) array, got shape {a.shape}")


def _offsets(kernel: int):
    r = kernel // 2
    return [(dy, dx) for dy in range(-r, r + 1) for dx in range(-r, r + 1)]


def pad_replicate(img: np.ndarray, radius: int) -> np.ndarray:
    """Edge-clamp padding of the two spatial axes."""
    a, squeeze = _as_3d(img)
    p = np.pad(a, ((radius, radius), (radius, radius), (0, 0)), mode="edge")
    return p[:, :, 0] if squeeze else p


def gather_windows(padded: np.ndarray, ys: np.ndarray, xs: np.ndarray, kernel: int) -> np.ndarray:
    """(k*k, n, C) window samples around pixels (ys, xs) of the unpadded image.

    `padded` must come from `pad_replicate` with radius kernel // 2.
    Rows follow the same row-major offset order as the whole-image filters.
    """
    p, _ = _as_3d(padded)
    r = kernel // 2
    out = np.empty((kernel * kernel, len(ys), p.shape[2]), dtype=p.dtype)
    for k, (dy, dx) in enumerate(_offsets(kernel)):
        out[k] = p[ys + r + dy, xs + r + dx]
    return out


def _gaussian_weights(kernel: int, sigma: float, dtype) -> np.ndarray:
    x = np.arange(kernel, dtype=np.float64) - kernel // 2
    g = np.exp(-(x * x) / (2.0 * sigma * sigma))
    w = np.outer(g, g)
    return (w / w.sum()).astype(dtype).ravel()


def _spatial_weights(kernel: int, sigma_s: float, dtype) -> np.ndarray:
    w = np.empty(kernel * kernel, dtype=np.float64)
    for k, (dy, dx) in enumerate(_offsets(kernel)):
        w[k] = np.exp(-(dy * dy + dx * dx) / (2.0 * sigma_s * sigma_s))
    return w.astype(dtype)


def box_filter(img: np.ndarray, kernel: int) -> np.ndarray:
    """Mean over a kernel x kernel window."""
    _require_odd(kernel)
    a, squeeze = _as_3d(img)
    p = pad_replicate(a, kernel // 2)
    r = kernel // 2
    h, w = a.shape[:2]
    acc = np.zeros_like(a)
    for dy, dx in _offsets(kernel):
        acc += p[r + dy : r + dy + h, r + dx : r + dx + w]
    out = np.clip(acc / np.asarray(kernel * kernel, dtype=a.dtype), 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def gaussian_filter(img: np.ndarray, kernel: int, sigma: float) -> np.ndarray:
    """Gaussian smoothing, kernel truncated to the window and renormalized."""
    _require_odd(kernel)
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    a, squeeze = _as_3d(img)
    wf = _gaussian_weights(kernel, sigma, a.dtype)
    p = pad_replicate(a, kernel // 2)
    r = kernel // 2
    h, w = a.shape[:2]
    acc = np.zeros_like(a)
    for k, (dy, dx) in enumerate(_offsets(kernel)):
        acc += wf[k] * p[r + dy : r + dy + h, r + dx : r + dx + w]
    out = np.clip(acc, 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def median_filter(img: np.ndarray, kernel: int) -> np.ndarray:
    """Per-channel window median (odd sample count, so the middle element)."""
    _require_odd(kernel)
    a, squeeze = _as_3d(img)
    p = pad_replicate(a, kernel // 2)
    r = kernel // 2
    h, w = a.shape[:2]
    stack = np.empty((kernel * kernel,) + a.shape, dtype=a.dtype)
    for k, (dy, dx) in enumerate(_offsets(kernel)):
        stack[k] = p[r + dy : r + dy + h, r + dx : r + dx + w]
    out = np.clip(np.median(stack, axis=0), 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def bilateral_filter(img: np.ndarray, kernel: int, sigma_c: float, sigma_s: float) -> np.ndarray:
    """Edge-aware smoothing with per-channel range weights on the [0, 1] scale."""
    _require_odd(kernel)
    if sigma_c <= 0 or sigma_s <= 0:
        raise ValueError(f"sigmas must be positive, got sigma_c={sigma_c} sigma_s={sigma_s}")
    a, squeeze = _as_3d(img)
    ws = _spatial_weights(kernel, sigma_s, a.dtype)
    inv_c = np.asarray(-1.0 / (2.0 * sigma_c * sigma_c), dtype=a.dtype)
    p = pad_replicate(a, kernel // 2)
    r = kernel // 2
    h, w = a.shape[:2]
    num = np.zeros_like(a)
    den = np.zeros_like(a)
    for k, (dy, dx) in enumerate(_offsets(kernel)):
        sh = p[r + dy : r + dy + h, r + dx : r + dx + w]
        d = sh - a
        wk = ws[k] * np.exp(d * d * inv_c)
        num += wk * sh
        den += wk
    out = np.clip(num / den, 0.0, 1.0)
    return out[:, :, 0] if squeeze else out


def apply_spec(img: np.ndarray, spec: FilterSpec) -> np.ndarray:
    """Whole-image output of one action or decomposition filter."""
    if spec.kind == "box":
        return box_filter(img, spec.kernel)
    if spec.kind == "gaussian":
        return gaussian_filter(img, spec.kernel, spec.sigma)
    if spec.kind == "median":
        return median_filter(img, spec.kernel)
    if spec.kind == "bilateral":
        return bilateral_filter(img, spec.kernel, spec.sigma_c, spec.sigma_s)
    a = np.asarray(img)
    step = np.asarray(PIXEL_STEP, dtype=a.dtype)
    if spec.kind == "increment":
        return np.clip(a + step, 0.0, 1.0)
    if spec.kind == "decrement":
        return np.clip(a - step, 0.0, 1.0)
    return a.copy()  # identity


def action_planes(img: np.ndarray) -> np.ndarray:
    """All 9 action outputs for the current state, stacked as (9, H, W, C)."""
    a, _ = _as_3d(img)
    out = np.empty((N_ACTIONS,) + a.shape, dtype=a.dtype)
    for idx in range(1, N_ACTIONS + 1):
        out[idx - 1] = _as_3d(apply_spec(a, ACTION_SET[idx]))[0]
    return out


def apply_action(img: np.ndarray, action_index: int, at: tuple[int, int]) -> np.ndarray:
    """Value the indexed action produces at one pixel (channel vector)."""
    if action_index not in ACTION_SET:
        raise ValueError(f"action index must be in 1..{N_ACTIONS}, got {action_index}")
    a, _ = _as_3d(img)
    y, x = at
    if not (0 <= y < a.shape[0] and 0 <= x < a.shape[1]):
        raise ValueError(f"pixel {at} out of bounds for {a.shape[0]}x{a.shape[1]} image")
    return _as_3d(apply_spec(a, ACTION_SET[action_index]))[0][y, x].copy()


def masked_action_values(img: np.ndarray, ys: np.ndarray, xs: np.ndarray) -> np.ndarray:
    """(9, n, C) candidate values of every action at the listed pixels.

    Pixel-exact (bitwise) against `action_planes` evaluated at the same
    coordinates; the accumulation order per pixel is identical.
    """
    a, _ = _as_3d(img)
    kernel = 5
    n = len(ys)
    c = a.shape[2]
    p = pad_replicate(a, kernel // 2)
    win = gather_windows(p, ys, xs, kernel)  # (25, n, C)
    center = win[(kernel * kernel) // 2]
    out = np.empty((N_ACTIONS, n, c), dtype=a.dtype)

    # 1: box
    acc = np.zeros((n, c), dtype=a.dtype)
    for k in range(kernel * kernel):
        acc += win[k]
    out[0] = np.clip(acc / np.asarray(kernel * kernel, dtype=a.dtype), 0.0, 1.0)

    # 2, 3: bilateral variants
    for row, idx in ((1, 2), (2, 3)):
        spec = ACTION_SET[idx]
        ws = _spatial_weights(kernel, spec.sigma_s, a.dtype)
        inv_c = np.asarray(-1.0 / (2.0 * spec.sigma_c * spec.sigma_c), dtype=a.dtype)
        num = np.zeros((n, c), dtype=a.dtype)
        den = np.zeros((n, c), dtype=a.dtype)
        for k in range(kernel * kernel):
            d = win[k] - center
            wk = ws[k] * np.exp(d * d * inv_c)
            num += wk * win[k]
            den += wk
        out[row] = np.clip(num / den, 0.0, 1.0)

    # 4: median
    out[3] = np.clip(np.median(win, axis=0), 0.0, 1.0)

    # 5, 6: gaussian variants
    for row, idx in ((4, 5), (5, 6)):
        wf = _gaussian_weights(kernel, ACTION_SET[idx].sigma, a.dtype)
        acc = np.zeros((n, c), dtype=a.dtype)
        for k in range(kernel * kernel):
            acc += wf[k] * win[k]
        out[row] = np.clip(acc, 0.0, 1.0)

    step = np.asarray(PIXEL_STEP, dtype=a.dtype)
    out[6] = np.clip(center + step, 0.0, 1.0)
    out[7] = np.clip(center - step, 0.0, 1.0)
    out[8] = center
    return out
