import numpy as np
import pytest
from scipy.ndimage import gaussian_filter as _blur

from derainkit.image import new_image


def natural_image(seed: int, h: int = 96, w: int = 96) -> np.ndarray:
    """Deterministic photo-like test image: smooth fields, blocks, mild grain."""
    rg = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.zeros((h, w))
    for _ in range(6):
        fy, fx = rg.uniform(0.5, 3.0, 2)
        base += rg.uniform(0.2, 1.0) * np.sin(
            2 * np.pi * (fy * yy / h + fx * xx / w) + rg.uniform(0, 2 * np.pi)
        )
    base = (base - base.min()) / (np.ptp(base) + 1e-12)
    for _ in range(4):
        y0, x0 = rg.integers(0, h - 10), rg.integers(0, w - 10)
        hh, ww = rg.integers(8, max(9, h // 3)), rg.integers(8, max(9, w // 3))
        base[y0 : y0 + hh, x0 : x0 + ww] = (
            base[y0 : y0 + hh, x0 : x0 + ww] * 0.4 + rg.uniform(0.1, 0.9) * 0.6
        )
    base = _blur(base, 0.7)
    img = np.stack(
        [np.clip(base * rg.uniform(0.85, 1.0) + rg.uniform(-0.04, 0.04), 0, 1) for _ in range(3)],
        axis=-1,
    )
    return new_image(0.1 + 0.8 * img)


@pytest.fixture
def photo():
    return natural_image(7)
