"""Rain-pixel localization via dictionary learning.

Pipeline: split the luma plane into low/high frequency bands with an
edge-preserving bilateral filter, learn a patch dictionary on the
high-frequency band, pick out rain-related atoms by clustering their
oriented-gradient signatures (rain streaks are geometrically simple, so
their atoms form the tight cluster), rebuild the rain component from
those atoms alone, and threshold it into a binary mask.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import NamedTuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from PIL import Image as _PILImage

from . import rng
from .filters import FilterSpec, apply_spec
from .image import luma, new_image

_LASSO_TOL = 1e-5
_LASSO_MAX_SWEEPS = 1000


class LassoConvergenceError(RuntimeError):
    """Coordinate descent hit the sweep cap; carries the worst residual."""

    def __init__(self, violation: float, sweeps: int):
        super().__init__(
            f"lasso coordinate descent stopped after {sweeps} sweeps with "
            f"subgradient residual {violation:.3e} > {_LASSO_TOL:.0e}"
        )
        self.violation = violation


class FrequencyDecomposition(NamedTuple):
    """Low-frequency luma plane and the signed high-frequency remainder."""

    low: np.ndarray
    high: np.ndarray


def decompose(img: np.ndarray, spec: FilterSpec) -> FrequencyDecomposition:
    """Bilateral low/high split of the luma plane; low + high == luma."""
    img = new_image(img)
    gray = luma(img)
    low = apply_spec(gray, spec)
    return FrequencyDecomposition(low=low, high=gray - low)


@dataclass(frozen=True)
class PatchSet:
    """Vectorized overlapping patches of a single plane.

    `patches` is (n, N_p) with n = patch_size**2; each column is one
    row-major-flattened window. Centers are taken every `stride` pixels
    starting at (0, 0), with replicate padding so border pixels can be
    centers too.
    """

    patch_size: int
    patches: np.ndarray
    centers: np.ndarray  # (N_p, 2) as (row, col)


def extract_patches(high: np.ndarray, p: int, stride: int = 1) -> PatchSet:
    high = np.asarray(high, dtype=np.float64)
    if high.ndim != 2:
        raise ValueError(f"expected a single plane, got shape {high.shape}")
    h, w = high.shape
    if p % 2 == 0 or p < 1:
        raise ValueError(f"patch size must be odd, got {p}")
    if p > h or p > w:
        raise ValueError(f"patch size {p} exceeds image extent {h}x{w}")
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    r = p // 2
    padded = np.pad(high, r, mode="edge")
    windows = sliding_window_view(padded, (p, p))[::stride, ::stride]
    ys = np.arange(0, h, stride)
    xs = np.arange(0, w, stride)
    patches = windows.reshape(len(ys) * len(xs), p * p).T.copy()
    centers = np.stack(np.meshgrid(ys, xs, indexing="ij"), axis=-1).reshape(-1, 2)
    return PatchSet(patch_size=p, patches=patches, centers=centers)


def _kkt_violation(resid_corr: np.ndarray, theta: np.ndarray, lam: float) -> float:
    """Worst lasso subgradient residual over all coefficients and columns."""
    active = theta != 0.0
    v_active = np.abs(resid_corr - lam * np.sign(theta))
    v_inactive = np.abs(resid_corr) - lam
    viol = np.where(active, v_active, np.maximum(v_inactive, 0.0))
    return float(viol.max()) if viol.size else 0.0


def _lasso_cd(
    atoms: np.ndarray,
    targets: np.ndarray,
    lam: float,
    warm: np.ndarray | None = None,
    tol: float = _LASSO_TOL,
    max_sweeps: int = _LASSO_MAX_SWEEPS,
) -> tuple[np.ndarray, float]:
    """Cyclic coordinate descent on 0.5*||y - D theta||^2 + lam*||theta||_1
    for every column of `targets` at once.

    After the first full sweep, iteration narrows to the coordinates that
    are active or violating (plain working-set strategy); a full
    subgradient check decides convergence. Returns (codes, worst residual).
    """
    n, m = atoms.shape
    n_cols = targets.shape[1]
    gram = atoms.T @ atoms
    corr = atoms.T @ targets
    diag = np.diag(gram).copy()
    theta = np.zeros((m, n_cols)) if warm is None else warm.copy()
    gt = gram @ theta if warm is not None else np.zeros_like(theta)

    coords = np.arange(m)
    sweeps = 0
    violation = np.inf
    while sweeps < max_sweeps:
        for j in coords:
            if diag[j] == 0.0:
                continue
            rho = corr[j] - gt[j] + diag[j] * theta[j]
            new = np.sign(rho) * np.maximum(np.abs(rho) - lam, 0.0) / diag[j]
            delta = new - theta[j]
            hit = np.nonzero(delta)[0]
            if len(hit):
                gt[:, hit] += gram[:, j : j + 1] * delta[hit]
                theta[j] = new
        sweeps += 1
        if sweeps % 50 == 0:
            gt = gram @ theta  # kill drift from incremental updates
        resid_corr = corr - gt
        violation = _kkt_violation(resid_corr, theta, lam)
        if violation <= tol:
            return theta, violation
        active_rows = (theta != 0.0).any(axis=1)
        violating_rows = ((np.abs(resid_corr) - lam) > tol).any(axis=1)
        coords = np.nonzero(active_rows | violating_rows)[0]
        if len(coords) == 0:
            coords = np.arange(m)
    raise LassoConvergenceError(violation, sweeps)


@dataclass(frozen=True)
class Dictionary:
    """Learned atom matrix (columns unit norm) and its sparsity weight."""

    atoms: np.ndarray  # (n, m)
    lambda_d: float
    history: tuple[float, ...] = ()  # mean objective after each epoch

    @property
    def m(self) -> int:
        return self.atoms.shape[1]


@dataclass(frozen=True)
class SparseCode:
    """Lasso coefficients of one patch and the final subgradient residual."""

    coefficients: np.ndarray
    violation: float


def sparse_code(patch: np.ndarray, dictionary: Dictionary) -> SparseCode:
    """Lasso code of a single patch against a learned dictionary."""
    patch = np.asarray(patch, dtype=np.float64).ravel()
    if patch.shape[0] != dictionary.atoms.shape[0]:
        raise ValueError(
            f"patch length {patch.shape[0]} does not match atom length {dictionary.atoms.shape[0]}"
        )
    codes, violation = _lasso_cd(dictionary.atoms, patch[:, None], dictionary.lambda_d)
    return SparseCode(coefficients=codes[:, 0], violation=violation)


def dictionary_objective(patches: np.ndarray, atoms: np.ndarray, codes: np.ndarray, lam: float) -> float:
    """Mean per-patch value of 0.5*||y - D theta||^2 + lam*||theta||_1."""
    resid = patches - atoms @ codes
    per_patch = 0.5 * np.sum(resid * resid, axis=0) + lam * np.sum(np.abs(codes), axis=0)
    return float(per_patch.mean())


def learn_dictionary(
    patch_set: PatchSet, m: int, lambda_d: float, epochs: int, seed: int
) -> Dictionary:
    """Alternating sparse coding and block-coordinate atom updates.

    Patches are expected to be mean-centered per patch. Each epoch runs a
    full warm-started batch of lasso codes, then updates every atom to its
    unit-sphere minimizer given the codes; both phases are descent steps,
    so the recorded objective never increases across epochs.
    """
    y = patch_set.patches
    n, n_patches = y.shape
    if n_patches < m:
        raise ValueError(f"need at least m={m} patches, got {n_patches}")
    if not np.any(y):
        raise ValueError("all-zero patch set: no dictionary learnable")
    if lambda_d <= 0:
        raise ValueError(f"lambda_d must be positive, got {lambda_d}")

    gen = rng.stream_rng(seed, rng.STREAM_DICT)
    atoms = gen.standard_normal((n, m))
    atoms /= np.linalg.norm(atoms, axis=0, keepdims=True)
    if epochs == 0:
        return Dictionary(atoms=atoms, lambda_d=lambda_d)

    history = []
    codes = None
    for _ in range(epochs):
        codes, _ = _lasso_cd(atoms, y, lambda_d, warm=codes)
        acov = codes @ codes.T
        bcov = y @ codes.T
        for j in range(m):
            u = bcov[:, j] - atoms @ acov[:, j] + atoms[:, j] * acov[j, j]
            norm = np.linalg.norm(u)
            if norm > 1e-12:
                atoms[:, j] = u / norm
            # Unused atoms (norm ~ 0) keep their current unit vector.
        history.append(dictionary_objective(y, atoms, codes, lambda_d))
    return Dictionary(atoms=atoms, lambda_d=lambda_d, history=tuple(history))


def hog_of_atom(atom: np.ndarray, p: int, bins: int = 9) -> np.ndarray:
    """Single-cell unsigned orientation histogram of one atom.

    Central-difference gradients on the p x p patch, orientations folded
    to [0, pi), magnitude-weighted, L2-normalized. Bin 0 collects
    near-horizontal gradients (vertical structure). All-zero gradients
    give the zero descriptor.
    """
    atom = np.asarray(atom, dtype=np.float64)
    if atom.size != p * p:
        raise ValueError(f"atom length {atom.size} != p*p = {p * p}")
    patch = atom.reshape(p, p)
    gy, gx = np.gradient(patch)
    mag = np.hypot(gx, gy)
    ang = np.mod(np.arctan2(gy, gx), np.pi)
    idx = np.minimum((ang / np.pi * bins).astype(np.int64), bins - 1)
    hist = np.bincount(idx.ravel(), weights=mag.ravel(), minlength=bins)
    norm = np.linalg.norm(hist)
    return hist / norm if norm > 0 else hist


def split_atoms(descriptors: np.ndarray, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """2-means over atom descriptors; the tighter cluster is rain.

    k-means++ seeding from `seed`, Lloyd iterations until assignments
    stabilize (at most 100). Tightness is the mean squared distance to the
    cluster centroid; exact ties go to the cluster holding the lowest atom
    index. Raises if all descriptors are identical.
    """
    desc = np.asarray(descriptors, dtype=np.float64)
    if desc.ndim != 2 or desc.shape[0] < 2:
        raise ValueError("need at least two descriptors to split")
    if np.all(desc == desc[0]):
        raise ValueError("all descriptors identical: no rain/non-rain split possible")

    gen = rng.stream_rng(seed, rng.STREAM_KMEANS)
    first = desc[int(gen.integers(desc.shape[0]))]
    d2 = np.sum((desc - first) ** 2, axis=1)
    second = desc[int(gen.choice(desc.shape[0], p=d2 / d2.sum()))]
    centers = np.stack([first, second])

    assign = np.full(desc.shape[0], -1, dtype=np.int64)
    for _iteration in range(100):
        dist = np.sum((desc[:, None, :] - centers[None, :, :]) ** 2, axis=2)
        new_assign = np.argmin(dist, axis=1)
        for k in range(2):
            if not np.any(new_assign == k):
                far = int(np.argmax(dist[np.arange(len(desc)), new_assign]))
                new_assign[far] = k
        if np.array_equal(new_assign, assign):
            break
        assign = new_assign
        for k in range(2):
            centers[k] = desc[assign == k].mean(axis=0)

    variances = []
    for k in range(2):
        members = desc[assign == k]
        variances.append(float(np.mean(np.sum((members - centers[k]) ** 2, axis=1))))
    if abs(variances[0] - variances[1]) <= 1e-12:
        rain_k = int(assign[0])  # tie: take the cluster holding atom 0
    else:
        rain_k = int(np.argmin(variances))
    rain = np.nonzero(assign == rain_k)[0]
    other = np.nonzero(assign != rain_k)[0]
    return rain, other


def reconstruct_rain(
    patch_set: PatchSet, dictionary: Dictionary, rain_indices: np.ndarray, dims: tuple[int, int]
) -> np.ndarray:
    """Rain component rebuilt from rain atoms only, overlap-averaged.

    Each patch is sparse-coded, coefficients of non-rain atoms are zeroed,
    and the partial reconstructions are accumulated back onto the pixel
    grid and divided by per-pixel coverage.
    """
    rain_indices = np.asarray(rain_indices, dtype=np.int64)
    if rain_indices.size == 0:
        raise ValueError("empty rain atom index set")
    h, w = dims
    p = patch_set.patch_size
    r = p // 2

    codes, _ = _lasso_cd(dictionary.atoms, patch_set.patches, dictionary.lambda_d)
    keep = np.zeros(dictionary.m, dtype=bool)
    keep[rain_indices] = True
    codes[~keep] = 0.0
    recon = dictionary.atoms @ codes  # (p*p, N_p)

    acc = np.zeros((h + 2 * r, w + 2 * r))
    cnt = np.zeros((h + 2 * r, w + 2 * r))
    dy, dx = np.mgrid[0:p, 0:p]
    rows = patch_set.centers[:, 0][:, None, None] + dy[None]
    cols = patch_set.centers[:, 1][:, None, None] + dx[None]
    np.add.at(acc, (rows, cols), recon.T.reshape(-1, p, p))
    np.add.at(cnt, (rows, cols), 1.0)
    out = np.divide(acc, cnt, out=np.zeros_like(acc), where=cnt > 0)
    return out[r : r + h, r : r + w]


def binarize(rain_raster: np.ndarray, threshold: float) -> np.ndarray:
    """Mask of pixels whose |response| exceeds threshold * max |response|."""
    if not 0.0 < threshold < 1.0:
        raise ValueError(f"threshold must lie in (0, 1), got {threshold}")
    raster = np.asarray(rain_raster, dtype=np.float64)
    peak = np.abs(raster).max()
    if peak == 0.0:
        return np.zeros(raster.shape, dtype=bool)
    return np.abs(raster) > threshold * peak


@dataclass(frozen=True)
class MaskConfig:
    """Tunables of the rain-mask pipeline. The source method fixes none of
    these, so they are implementation defaults, all overridable."""

    patch_size: int = 9
    atoms: int = 128
    lambda_d: float = 0.15
    stride: int = 2
    threshold: float = 0.15
    epochs: int = 6
    bilateral_kernel: int = 9
    bilateral_sigma_s: float = 3.0
    bilateral_sigma_c: float = 0.3
    hog_bins: int = 9
    seed: int = 0

    def __post_init__(self):
        if self.patch_size % 2 == 0 or self.patch_size < 3:
            raise ValueError(f"patch_size must be odd and >= 3, got {self.patch_size}")
        if self.atoms < 2:
            raise ValueError(f"need at least 2 atoms, got {self.atoms}")
        if self.stride < 1 or self.epochs < 0 or self.hog_bins < 2:
            raise ValueError("stride >= 1, epochs >= 0, hog_bins >= 2 required")
        FilterSpec(
            "bilateral",
            kernel=self.bilateral_kernel,
            sigma_c=self.bilateral_sigma_c,
            sigma_s=self.bilateral_sigma_s,
        )
        if not 0.0 < self.threshold < 1.0:
            raise ValueError(f"threshold must lie in (0, 1), got {self.threshold}")


def compute_rdp(img: np.ndarray, cfg: MaskConfig = MaskConfig()) -> np.ndarray:
    """Full rain-mask pipeline; (H, W) boolean, True marks suspected rain."""
    img = new_image(img)
    spec = FilterSpec(
        "bilateral",
        kernel=cfg.bilateral_kernel,
        sigma_c=cfg.bilateral_sigma_c,
        sigma_s=cfg.bilateral_sigma_s,
    )
    dec = decompose(img, spec)
    ps = extract_patches(dec.high, cfg.patch_size, cfg.stride)
    centered = replace(ps, patches=ps.patches - ps.patches.mean(axis=0, keepdims=True))
    dictionary = learn_dictionary(centered, cfg.atoms, cfg.lambda_d, cfg.epochs, cfg.seed)
    descriptors = np.stack(
        [hog_of_atom(dictionary.atoms[:, j], cfg.patch_size, cfg.hog_bins) for j in range(dictionary.m)]
    )
    rain_idx, _ = split_atoms(descriptors, cfg.seed)
    raster = reconstruct_rain(centered, dictionary, rain_idx, img.shape[:2])
    return binarize(raster, cfg.threshold)


def save_mask(mask: np.ndarray, path) -> None:
    """Write a mask PNG: 0 = keep, 255 = rain."""
    raw = np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)
    _PILImage.fromarray(raw, mode="L").save(path, format="PNG")


def load_mask(path) -> np.ndarray:
    """Read a mask PNG written by save_mask (any value > 127 counts as rain)."""
    with _PILImage.open(path) as im:
        if im.mode != "L":
            im = im.convert("L")
        arr = np.asarray(im, dtype=np.uint8)
    return arr > 127
