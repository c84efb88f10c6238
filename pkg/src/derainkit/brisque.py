"""No-reference quality scoring from natural scene statistics.

The score pipeline is the classic BRISQUE construction: locally normalize
luminance (MSCN coefficients), fit a generalized Gaussian to the MSCN
distribution and asymmetric generalized Gaussians to the four neighboring
pairwise products, at two scales, and feed the 36 resulting moments to a
trained regressor. Lower scores mean better quality under the shipped
model, which is trained on a synthetic corpus (see tools/train_scorer.py);
only score differences are meaningful, not absolute calibration against
models trained on subjective-study databases.
"""

from __future__ import annotations

from dataclasses import dataclass
from importlib import resources

import numpy as np
from scipy.ndimage import correlate1d
from scipy.special import gammaln

from .image import ImageError, luma, new_image

N_FEATURES = 36

_MSCN_WINDOW = 7
_MSCN_SIGMA = 7.0 / 6.0
_MSCN_C = 1.0 / 255.0

_ALPHA_GRID_STEP = 1e-3
_ALPHA_MIN = 0.2
_ALPHA_MAX = 10.0


class ScorerError(ValueError):
    """Malformed scorer model file."""


def _mscn_kernel() -> np.ndarray:
    x = np.arange(_MSCN_WINDOW, dtype=np.float64) - _MSCN_WINDOW // 2
    k = np.exp(-(x * x) / (2.0 * _MSCN_SIGMA * _MSCN_SIGMA))
    return k / k.sum()


def _local_mean(plane: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    out = correlate1d(plane, kernel, axis=0, mode="nearest")
    return correlate1d(out, kernel, axis=1, mode="nearest")


def _mscn_plane(x: np.ndarray) -> np.ndarray:
    if x.min() == x.max():
        return np.zeros_like(x)  # constant planes normalize to exactly zero
    # Windowing the globally mean-shifted plane keeps near-constant images
    # well conditioned; the shift cancels out of the statistics otherwise.
    u = x - x.mean()
    k = _mscn_kernel()
    mu = _local_mean(u, k)
    var = _local_mean(u * u, k) - mu * mu
    sigma = np.sqrt(np.maximum(var, 0.0))
    return (u - mu) / (sigma + _MSCN_C)


def mscn(img: np.ndarray) -> np.ndarray:
    """Mean-subtracted contrast-normalized coefficients of the luma plane.

    (I - mu) / (sigma + C) with mu, sigma from a 7x7 Gaussian window
    (sigma_w = 7/6) and C = 1/255 on the [0, 1] value scale.
    """
    img = new_image(img)
    h, w = img.shape[:2]
    if h < _MSCN_WINDOW or w < _MSCN_WINDOW:
        raise ImageError(f"mscn needs at least {_MSCN_WINDOW}x{_MSCN_WINDOW} images, got {h}x{w}")
    return _mscn_plane(luma(img))


_alpha_table: tuple[np.ndarray, np.ndarray] | None = None


def _ratio(alpha: np.ndarray) -> np.ndarray:
    # rho(alpha) = Gamma(2/a)^2 / (Gamma(1/a) Gamma(3/a)), monotone increasing.
    return np.exp(2.0 * gammaln(2.0 / alpha) - gammaln(1.0 / alpha) - gammaln(3.0 / alpha))


def _invert_ratio(rho: float) -> float:
    """Shape parameter whose moment ratio matches rho (grid + bisection)."""
    global _alpha_table
    if _alpha_table is None:
        grid = np.arange(_ALPHA_MIN, _ALPHA_MAX + _ALPHA_GRID_STEP / 2, _ALPHA_GRID_STEP)
        _alpha_table = (grid, _ratio(grid))
    grid, table = _alpha_table
    if rho <= table[0]:
        return float(grid[0])
    if rho >= table[-1]:
        return float(grid[-1])
    i = int(np.searchsorted(table, rho))
    lo, hi = float(grid[i - 1]), float(grid[i])
    for _ in range(40):
        mid = 0.5 * (lo + hi)
        if float(_ratio(np.asarray(mid))) < rho:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def fit_ggd(samples: np.ndarray) -> tuple[float, float]:
    """Moment-matched (shape, scale) of a zero-mean generalized Gaussian."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise ValueError(f"need at least 100 samples, got {x.size}")
    m2 = float(np.mean(x * x))
    if m2 == 0.0:
        raise ValueError("degenerate all-zero samples")
    m1 = float(np.mean(np.abs(x)))
    alpha = _invert_ratio(m1 * m1 / m2)
    return alpha, float(np.sqrt(m2))


def fit_aggd(samples: np.ndarray) -> tuple[float, float, float, float]:
    """Moment-matched (shape, left scale, right scale, mean term) of an
    asymmetric generalized Gaussian. Requires samples of both signs."""
    x = np.asarray(samples, dtype=np.float64).ravel()
    if x.size < 100:
        raise ValueError(f"need at least 100 samples, got {x.size}")
    left = x[x < 0.0]
    right = x[x > 0.0]
    if left.size == 0 or right.size == 0:
        raise ValueError("one-sided samples: AGGD fit needs both signs")
    sigma_l = float(np.sqrt(np.mean(left * left)))
    sigma_r = float(np.sqrt(np.mean(right * right)))
    g = sigma_l / sigma_r
    m1 = float(np.mean(np.abs(x)))
    m2 = float(np.mean(x * x))
    r_hat = (m1 * m1 / m2) * (g ** 3 + 1.0) * (g + 1.0) / (g * g + 1.0) ** 2
    alpha = _invert_ratio(r_hat)
    mean = (sigma_r - sigma_l) * float(
        np.exp(gammaln(2.0 / alpha) - 0.5 * gammaln(1.0 / alpha) - 0.5 * gammaln(3.0 / alpha))
    )
    return alpha, sigma_l, sigma_r, mean


def _downsample2(plane: np.ndarray) -> np.ndarray:
    h2, w2 = plane.shape[0] // 2, plane.shape[1] // 2
    return plane[: 2 * h2, : 2 * w2].reshape(h2, 2, w2, 2).mean(axis=(1, 3))


def _scale_features(m: np.ndarray) -> list[float]:
    feats = list(fit_ggd(m))
    # Neighboring products: horizontal, vertical, both diagonals.
    pairs = (
        m[:, :-1] * m[:, 1:],
        m[:-1, :] * m[1:, :],
        m[:-1, :-1] * m[1:, 1:],
        m[:-1, 1:] * m[1:, :-1],
    )
    for prod in pairs:
        feats.extend(fit_aggd(prod))
    return feats


def brisque_features(img: np.ndarray) -> np.ndarray:
    """36-entry natural-scene-statistics feature vector.

    Per scale (full resolution, then 2x2-average downsample): GGD shape and
    scale of the MSCN map, then (shape, left scale, right scale, mean) of
    each of the four pairwise-product maps.
    """
    img = new_image(img)
    h, w = img.shape[:2]
    if h < 32 or w < 32:
        raise ImageError(f"brisque needs at least 32x32 images, got {h}x{w}")
    x = luma(img)
    feats: list[float] = []
    for scale in range(2):
        if scale:
            x = _downsample2(x)
        feats.extend(_scale_features(_mscn_plane(x)))
    out = np.asarray(feats, dtype=np.float64)
    assert out.shape == (N_FEATURES,)
    return out


@dataclass(frozen=True)
class ScorerModel:
    """Loaded quality regressor: linear fallback or RBF support-vector model.

    Features are min-max scaled to [-1, 1] with the stored per-feature
    bounds before prediction.
    """

    kind: str  # "linear" or "svr"
    feat_min: np.ndarray
    feat_max: np.ndarray
    bias: float
    weights: np.ndarray | None = None      # linear: (36,)
    gamma: float = 0.0                     # svr
    support: np.ndarray | None = None      # svr: (k, 36), already scaled
    dual: np.ndarray | None = None         # svr: (k,)

    def predict(self, features: np.ndarray) -> float:
        scaled = -1.0 + 2.0 * (features - self.feat_min) / (self.feat_max - self.feat_min)
        if self.kind == "linear":
            return float(self.weights @ scaled + self.bias)
        d = self.support - scaled
        k = np.exp(-self.gamma * np.sum(d * d, axis=1))
        return float(self.dual @ k + self.bias)


_HEADER = "derainkit-scorer 1"


def _parse_floats(text: str, count: int, what: str) -> np.ndarray:
    parts = text.split()
    if len(parts) != count:
        raise ScorerError(f"{what}: expected {count} values, got {len(parts)}")
    try:
        return np.asarray([float(p) for p in parts], dtype=np.float64)
    except ValueError as exc:
        raise ScorerError(f"{what}: {exc}") from exc


def load_scorer(path) -> ScorerModel:
    """Parse the plain-text scorer format (see save_scorer for the layout)."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    if not lines or lines[0] != _HEADER:
        raise ScorerError(f"{path}: missing or unsupported header (want {_HEADER!r})")

    fields: dict[str, str] = {}
    body_at = len(lines)
    for i, ln in enumerate(lines[1:], start=1):
        key, _, value = ln.partition(" ")
        if key == "support":
            fields[key] = value
            body_at = i + 1
            break
        fields[key] = value

    kind = fields.get("kind")
    if kind not in ("linear", "svr"):
        raise ScorerError(f"{path}: unknown scorer kind {fields.get('kind')!r}")
    try:
        n_feat = int(fields["features"])
    except (KeyError, ValueError) as exc:
        raise ScorerError(f"{path}: bad or missing feature count") from exc
    if n_feat != N_FEATURES:
        raise ScorerError(f"{path}: model has {n_feat} features, expected {N_FEATURES}")

    feat_min = _parse_floats(fields.get("min", ""), N_FEATURES, f"{path}: min")
    feat_max = _parse_floats(fields.get("max", ""), N_FEATURES, f"{path}: max")
    if not np.all(feat_min < feat_max):
        raise ScorerError(f"{path}: scaling bounds must satisfy min < max per feature")
    try:
        bias = float(fields["bias"])
    except (KeyError, ValueError) as exc:
        raise ScorerError(f"{path}: bad or missing bias") from exc

    if kind == "linear":
        weights = _parse_floats(fields.get("weights", ""), N_FEATURES, f"{path}: weights")
        return ScorerModel("linear", feat_min, feat_max, bias, weights=weights)

    try:
        gamma = float(fields["gamma"])
        n_sv = int(fields["support"])
    except (KeyError, ValueError) as exc:
        raise ScorerError(f"{path}: svr model needs gamma and support count") from exc
    rows = lines[body_at:]
    if len(rows) != n_sv:
        raise ScorerError(f"{path}: expected {n_sv} support rows, found {len(rows)}")
    dual = np.empty(n_sv, dtype=np.float64)
    support = np.empty((n_sv, N_FEATURES), dtype=np.float64)
    for i, row in enumerate(rows):
        vals = _parse_floats(row, N_FEATURES + 1, f"{path}: support row {i}")
        dual[i] = vals[0]
        support[i] = vals[1:]
    return ScorerModel("svr", feat_min, feat_max, bias, gamma=gamma, support=support, dual=dual)


def save_scorer(model: ScorerModel, path) -> None:
    """Write the versioned plain-text model format.

    Layout: header line; `kind`, `features`, `min`, `max`, `bias` fields;
    then `weights` (linear) or `gamma` plus `support <count>` followed by
    one row per support vector (dual coefficient, then 36 scaled features).
    """
    def fmt(arr):
        return " ".join(repr(float(v)) for v in arr)

    with open(path, "w", encoding="utf-8") as fh:
        fh.write(_HEADER + "\n")
        fh.write(f"kind {model.kind}\n")
        fh.write(f"features {N_FEATURES}\n")
        fh.write(f"min {fmt(model.feat_min)}\n")
        fh.write(f"max {fmt(model.feat_max)}\n")
        fh.write(f"bias {float(model.bias)!r}\n")
        if model.kind == "linear":
            fh.write(f"weights {fmt(model.weights)}\n")
        else:
            fh.write(f"gamma {float(model.gamma)!r}\n")
            fh.write(f"support {len(model.dual)}\n")
            for coef, sv in zip(model.dual, model.support):
                fh.write(f"{float(coef)!r} {fmt(sv)}\n")


def default_scorer_path() -> str:
    """Path of the scorer model shipped with the package."""
    return str(resources.files("derainkit").joinpath("data/brisque_svr.txt"))


def brisque_score(img: np.ndarray, model: ScorerModel) -> float:
    """Quality score of an image under a loaded model (lower is better)."""
    return model.predict(brisque_features(img))
