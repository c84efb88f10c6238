"""Regenerate the packaged quality-scorer model.

Builds a corpus of procedural clean images plus noise-, streak-, and
blur-distorted variants, labels them by distortion severity (clean low,
heavy noise/streaks high, mild blur in between), extracts the 36
natural-scene-statistics features, fits an RBF support-vector regressor,
and exports it to the package's plain-text scorer format.

Usage: python tools/train_scorer.py [output-path]
"""

from __future__ import annotations

import sys
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter as _blur
from sklearn.svm import SVR

from derainkit.brisque import ScorerModel, brisque_features, save_scorer
from derainkit.cli import synth_streaks
from derainkit.config import SynthConfig
from derainkit.image import new_image


def natural_image(seed: int, h: int = 96, w: int = 96) -> np.ndarray:
    rg = np.random.default_rng(seed)
    yy, xx = np.mgrid[0:h, 0:w].astype(np.float64)
    base = np.zeros((h, w))
    for _ in range(6):
        fy, fx = rg.uniform(0.5, 3.0, 2)
        base += rg.uniform(0.2, 1.0) * np.sin(2 * np.pi * (fy * yy / h + fx * xx / w) + rg.uniform(0, 2 * np.pi))
    base = (base - base.min()) / (np.ptp(base) + 1e-12)
    for _ in range(4):
        y0, x0 = rg.integers(0, h - 10), rg.integers(0, w - 10)
        hh, ww = rg.integers(8, h // 3), rg.integers(8, w // 3)
        base[y0 : y0 + hh, x0 : x0 + ww] = base[y0 : y0 + hh, x0 : x0 + ww] * 0.4 + rg.uniform(0.1, 0.9) * 0.6
    base = _blur(base, 0.7)
    img = np.stack(
        [np.clip(base * rg.uniform(0.85, 1.0) + rg.uniform(-0.04, 0.04), 0, 1) for _ in range(3)], axis=-1
    )
    return new_image(0.1 + 0.8 * img)


def build_corpus(n_clean: int = 48):
    feats, labels = [], []
    for i in range(n_clean):
        clean = natural_image(1000 + i)
        rg = np.random.default_rng(2000 + i)
        variants = [(clean, 5.0)]
        sigma = rg.uniform(0.03, 0.3)
        noisy = new_image(np.clip(clean + rg.normal(0, sigma, clean.shape), 0, 1))
        variants.append((noisy, min(100.0, 15.0 + 300.0 * sigma)))
        count = int(rg.integers(40, 160))
        inten = float(rg.uniform(0.15, 0.5))
        rain, _ = synth_streaks(clean, SynthConfig(count=count, intensity=inten, seed=3000 + i))
        variants.append((rain, min(90.0, 20.0 + 160.0 * inten)))
        bsig = rg.uniform(0.8, 2.0)
        blurred = new_image(_blur(clean, (bsig, bsig, 0)))
        variants.append((blurred, 12.0 + 6.0 * bsig))
        for img, label in variants:
            feats.append(brisque_features(img))
            labels.append(label)
    return np.asarray(feats), np.asarray(labels)


def main(out_path: str) -> None:
    feats, labels = build_corpus()
    fmin = feats.min(axis=0)
    fmax = feats.max(axis=0)
    spread = fmax - fmin
    fmax = np.where(spread < 1e-9, fmin + 1e-9, fmax)
    scaled = -1.0 + 2.0 * (feats - fmin) / (fmax - fmin)

    svr = SVR(kernel="rbf", C=50.0, gamma="scale", epsilon=2.0)
    svr.fit(scaled, labels)
    model = ScorerModel(
        kind="svr",
        feat_min=fmin,
        feat_max=fmax,
        bias=float(svr.intercept_[0]),
        gamma=float(svr._gamma),
        support=svr.support_vectors_,
        dual=svr.dual_coef_[0],
    )
    save_scorer(model, out_path)
    pred = np.array([model.predict(f) for f in feats])
    err = np.abs(pred - labels)
    print(f"wrote {out_path}: {len(model.dual)} support vectors, "
          f"train MAE {err.mean():.2f}, corr {np.corrcoef(pred, labels)[0, 1]:.3f}")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else str(
        Path(__file__).resolve().parent.parent / "src" / "derainkit" / "data" / "brisque_svr.txt"
    )
    main(out)
