"""Pseudo-derained reference sampling.

Each rain pixel is replaced by the value of a uniformly chosen non-rain
pixel within a Chebyshev neighborhood; non-rain pixels pass through
untouched. The draw is keyed by (seed, draw), so resampling the reference
at every training step just increments `draw`.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import rng


@dataclass(frozen=True)
class SamplerConfig:
    radius: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.radius < 1:
            raise ValueError(f"radius must be >= 1, got {self.radius}")


def _candidate_counts(free: np.ndarray, ys: np.ndarray, xs: np.ndarray, radius: int) -> np.ndarray:
    """Non-masked pixel count inside each (2r+1)^2 in-bounds window."""
    h, w = free.shape
    ii = np.zeros((h + 1, w + 1), dtype=np.int64)
    ii[1:, 1:] = np.cumsum(np.cumsum(free, axis=0), axis=1)
    y0 = np.clip(ys - radius, 0, h)
    y1 = np.clip(ys + radius + 1, 0, h)
    x0 = np.clip(xs - radius, 0, w)
    x1 = np.clip(xs + radius + 1, 0, w)
    return ii[y1, x1] - ii[y0, x1] - ii[y1, x0] + ii[y0, x0]


def sample_pseudo_reference(
    img: np.ndarray, mask: np.ndarray, cfg: SamplerConfig, draw: int
) -> np.ndarray:
    """One stochastic pseudo-derained reference.

    Masked pixels copy all channels from a uniformly chosen non-masked
    pixel within Chebyshev radius `cfg.radius`; if a pixel has no
    candidate at that radius, its radius doubles (capped at the image
    extent) until one exists. Deterministic given (img, mask, seed, draw).
    """
    img = np.asarray(img)
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != img.shape[:2]:
        raise ValueError(f"mask shape {mask.shape} does not match image {img.shape[:2]}")
    if mask.all():
        raise ValueError("mask covers every pixel: no source pixels to sample from")

    out = img.copy()
    ys, xs = np.nonzero(mask)
    if len(ys) == 0:
        return out

    h, w = mask.shape
    free = ~mask
    max_radius = max(h, w)

    # Smallest radius in the doubling schedule with at least one candidate.
    # At radius max(h, w) the window covers the whole image, which has
    # free pixels, so the loop always terminates.
    radius = np.full(len(ys), min(cfg.radius, max_radius), dtype=np.int64)
    while True:
        counts = np.empty(len(ys), dtype=np.int64)
        for r in np.unique(radius):
            sel = radius == r
            counts[sel] = _candidate_counts(free, ys[sel], xs[sel], int(r))
        need = counts == 0
        if not need.any():
            break
        radius[need] = np.minimum(radius[need] * 2, max_radius)

    gen = rng.stream_rng(cfg.seed, rng.STREAM_REFERENCE, draw)
    pending = np.arange(len(ys))
    while len(pending):
        r = radius[pending]
        span = 2 * r + 1
        # Uniform offset in the window; rejection keeps the accepted source
        # exactly uniform over in-bounds non-masked candidates.
        dy = np.floor(gen.random(len(pending)) * span).astype(np.int64) - r
        dx = np.floor(gen.random(len(pending)) * span).astype(np.int64) - r
        sy = ys[pending] + dy
        sx = xs[pending] + dx
        ok = (sy >= 0) & (sy < h) & (sx >= 0) & (sx < w)
        oky, okx = sy[ok], sx[ok]
        ok[ok] = free[oky, okx]
        hit = pending[ok]
        out[ys[hit], xs[hit]] = img[sy[ok], sx[ok]]
        pending = pending[~ok]
    return out
