import numpy as np
import pytest

from conftest import natural_image
from derainkit.cli import synth_streaks
from derainkit.config import SynthConfig
from derainkit.filters import FilterSpec
from derainkit.rainmask import (
    Dictionary,
    MaskConfig,
    PatchSet,
    binarize,
    compute_rdp,
    decompose,
    extract_patches,
    hog_of_atom,
    learn_dictionary,
    load_mask,
    reconstruct_rain,
    save_mask,
    sparse_code,
    split_atoms,
    _lasso_cd,
)

BILATERAL = FilterSpec("bilateral", kernel=9, sigma_c=0.3, sigma_s=3.0)


# -- decomposition -----------------------------------------------------------

def test_decompose_constant_zero_high():
    const = np.full((12, 12, 1), 0.6)
    dec = decompose(const, BILATERAL)
    assert np.abs(dec.high).max() < 1e-12


def test_decompose_sum_invariant(photo):
    dec = decompose(photo, BILATERAL)
    luma = photo @ np.array([0.299, 0.587, 0.114])
    assert np.abs(dec.low + dec.high - luma).max() <= 1e-9


def test_decompose_edge_preserving_keeps_step_out_of_high():
    img = np.zeros((16, 16, 1))
    img[:, 8:] = 0.8
    dec = decompose(img, FilterSpec("bilateral", kernel=5, sigma_c=0.1, sigma_s=5.0))
    assert np.abs(dec.high).max() < 0.01 * 0.8


# -- patches -----------------------------------------------------------------

def test_extract_patches_counts():
    ps = extract_patches(np.zeros((5, 5)), 3, stride=1)
    assert ps.patches.shape == (9, 25)
    assert len(ps.centers) == 25


def test_extract_patches_zero_raster():
    ps = extract_patches(np.zeros((6, 6)), 3, stride=2)
    assert not ps.patches.any()
    assert ps.patches.shape == (9, 9)


def test_extract_patches_center_window_hand_vectorized():
    raster = np.arange(25, dtype=np.float64).reshape(5, 5)
    ps = extract_patches(raster, 3, stride=1)
    center_idx = 2 * 5 + 2
    expected = raster[1:4, 1:4].ravel()
    assert np.array_equal(ps.patches[:, center_idx], expected)
    corner = np.pad(raster, 1, mode="edge")[0:3, 0:3].ravel()
    assert np.array_equal(ps.patches[:, 0], corner)


def test_extract_patches_validation():
    with pytest.raises(ValueError):
        extract_patches(np.zeros((5, 5)), 4)
    with pytest.raises(ValueError):
        extract_patches(np.zeros((5, 5)), 7)


# -- lasso -------------------------------------------------------------------

def _random_dictionary(rg, n, m):
    d = rg.standard_normal((n, m))
    return d / np.linalg.norm(d, axis=0, keepdims=True)


def test_sparse_code_zero_patch():
    rg = np.random.default_rng(0)
    dic = Dictionary(atoms=_random_dictionary(rg, 16, 8), lambda_d=0.1)
    code = sparse_code(np.zeros(16), dic)
    assert not code.coefficients.any()


def test_sparse_code_single_atom_soft_threshold():
    # Orthonormal dictionary: coding one atom gives a one-hot code shrunk
    # by exactly lambda.
    rg = np.random.default_rng(1)
    q, _ = np.linalg.qr(rg.standard_normal((16, 8)))
    dic = Dictionary(atoms=q, lambda_d=0.05)
    code = sparse_code(q[:, 3], dic)
    expected = np.zeros(8)
    expected[3] = 1.0 - 0.05
    assert np.allclose(code.coefficients, expected, atol=1e-10)


def test_sparse_code_full_shrinkage():
    rg = np.random.default_rng(2)
    atoms = _random_dictionary(rg, 16, 8)
    patch = rg.standard_normal(16)
    lam = np.abs(atoms.T @ patch).max() * 1.01
    code = sparse_code(patch, Dictionary(atoms=atoms, lambda_d=lam))
    assert not code.coefficients.any()


def sparse_instance(rg):
    """Patch-coding-like lasso instance: a sparse atom combination plus noise."""
    n = int(rg.integers(36, 101))
    m = int(rg.integers(max(8, n // 2), 2 * n))
    atoms = _random_dictionary(rg, n, m)
    k = int(rg.integers(1, 6))
    picks = rg.choice(m, size=k, replace=False)
    y = atoms[:, picks] @ rg.uniform(0.5, 1.5, k) + 0.05 * rg.standard_normal(n)
    lam = float(rg.uniform(0.05, 0.3))
    return atoms, y[:, None], lam


def test_lasso_kkt_random_instances():
    rg = np.random.default_rng(3)
    for _ in range(20):
        atoms, y, lam = sparse_instance(rg)
        theta, violation = _lasso_cd(atoms, y, lam)
        assert violation <= 1e-5
        resid = atoms.T @ (y - atoms @ theta)
        active = theta != 0
        assert np.abs(resid[active] - lam * np.sign(theta[active])).max(initial=0.0) <= 1e-5
        assert (np.abs(resid[~active]) - lam).max(initial=-1.0) <= 1e-5


# -- dictionary learning -----------------------------------------------------

def _patchset(patches):
    n = patches.shape[0]
    p = int(round(np.sqrt(n)))
    centers = np.zeros((patches.shape[1], 2), dtype=np.int64)
    return PatchSet(patch_size=p, patches=patches, centers=centers)


def test_learn_dictionary_epochs_zero_is_random_init():
    rg = np.random.default_rng(4)
    patches = rg.standard_normal((9, 40))
    d0 = learn_dictionary(_patchset(patches), 6, 0.1, 0, seed=5)
    d1 = learn_dictionary(_patchset(patches), 6, 0.1, 0, seed=5)
    assert np.array_equal(d0.atoms, d1.atoms)
    assert d0.history == ()
    assert np.allclose(np.linalg.norm(d0.atoms, axis=0), 1.0, atol=1e-6)


def test_learn_dictionary_objective_monotone():
    rg = np.random.default_rng(5)
    patches = rg.standard_normal((25, 120))
    dic = learn_dictionary(_patchset(patches), 12, 0.2, 6, seed=0)
    hist = dic.history
    assert len(hist) == 6
    for a, b in zip(hist, hist[1:]):
        assert b <= a + 1e-6


def test_learn_dictionary_rejects_degenerate():
    with pytest.raises(ValueError):
        learn_dictionary(_patchset(np.zeros((9, 30))), 4, 0.1, 2, seed=0)
    with pytest.raises(ValueError):
        learn_dictionary(_patchset(np.ones((9, 3))), 4, 0.1, 2, seed=0)


def test_dictionary_recovery_of_known_atoms():
    # Patches are sparse combinations of 8 known orthogonal atoms; after
    # training, held-out patches must reconstruct well through their codes.
    rg = np.random.default_rng(6)
    q, _ = np.linalg.qr(rg.standard_normal((16, 8)))
    def make(count):
        out = np.zeros((16, count))
        for i in range(count):
            picks = rg.choice(8, size=2, replace=False)
            coef = rg.uniform(0.5, 1.5, size=2) * rg.choice([-1.0, 1.0], size=2)
            out[:, i] = q[:, picks] @ coef
        return out

    train, held = make(400), make(60)
    dic = learn_dictionary(_patchset(train), 8, 0.03, 25, seed=1)
    codes, _ = _lasso_cd(dic.atoms, held, dic.lambda_d)
    recon = dic.atoms @ codes
    rel = np.linalg.norm(recon - held) / np.linalg.norm(held)
    assert rel < 0.1


# -- atom descriptors and clustering ----------------------------------------

def test_hog_constant_atom_zero_descriptor():
    d = hog_of_atom(np.full(25, 0.3), 5)
    assert not d.any()


def test_hog_vertical_stripes_concentrate_in_bin_zero():
    p = 5
    atom = np.tile(np.array([0.0, 1.0, 0.0, 1.0, 0.0]), (p, 1)).ravel()
    d = hog_of_atom(atom, p)
    assert d[0] > 0.95


def test_hog_norm_is_zero_or_one():
    rg = np.random.default_rng(7)
    for _ in range(10):
        d = hog_of_atom(rg.standard_normal(25), 5)
        assert np.linalg.norm(d) == pytest.approx(1.0, abs=1e-9)
    assert np.linalg.norm(hog_of_atom(np.zeros(25), 5)) == 0.0


def test_split_atoms_tight_cluster_is_rain():
    rg = np.random.default_rng(8)
    tight = np.tile([1.0, 0, 0, 0], (10, 1)) + 0.01 * rg.standard_normal((10, 4))
    diffuse = rg.standard_normal((10, 4)) * 0.8 + np.array([0, 8, 0, 0])
    desc = np.vstack([diffuse, tight])
    rain, other = split_atoms(desc, seed=0)
    assert set(rain) == set(range(10, 20))
    assert set(other) == set(range(10))
    assert len(np.intersect1d(rain, other)) == 0


def test_split_atoms_two_descriptors():
    rain, other = split_atoms(np.array([[0.0, 0.0], [1.0, 1.0]]), seed=3)
    assert set(rain) | set(other) == {0, 1}
    assert set(rain) == {0}  # tie on variance, first index wins


def test_split_atoms_duplicates_form_zero_variance_cluster():
    d = np.array([0.5, 0.5, 0.0])
    e = np.array([3.0, -1.0, 0.5])
    rain, other = split_atoms(np.vstack([d, d, e]), seed=1)
    assert set(rain) == {0, 1}
    assert set(other) == {2}


def test_split_atoms_identical_error():
    with pytest.raises(ValueError):
        split_atoms(np.ones((5, 4)), seed=0)


# -- reconstruction and binarization ----------------------------------------

def test_reconstruct_all_atoms_equals_full_approximation():
    rg = np.random.default_rng(9)
    high = rg.standard_normal((10, 10)) * 0.1
    ps = extract_patches(high, 3, stride=1)
    dic = learn_dictionary(ps, 6, 0.05, 4, seed=0)
    full = reconstruct_rain(ps, dic, np.arange(6), (10, 10))

    codes, _ = _lasso_cd(dic.atoms, ps.patches, dic.lambda_d)
    recon = dic.atoms @ codes
    acc = np.zeros((12, 12))
    cnt = np.zeros((12, 12))
    for idx, (cy, cx) in enumerate(ps.centers):
        acc[cy : cy + 3, cx : cx + 3] += recon[:, idx].reshape(3, 3)
        cnt[cy : cy + 3, cx : cx + 3] += 1
    expected = (acc / cnt)[1:11, 1:11]
    assert np.allclose(full, expected, atol=1e-12)


def test_reconstruct_inactive_rain_atoms_zero():
    rg = np.random.default_rng(10)
    q, _ = np.linalg.qr(rg.standard_normal((9, 4)))
    patches = np.outer(q[:, 0], rg.uniform(0.5, 1.0, 16))
    ps = _patchset(patches)
    centers = np.stack(np.meshgrid(np.arange(4), np.arange(4), indexing="ij"), -1).reshape(-1, 2)
    ps = PatchSet(patch_size=3, patches=patches, centers=centers)
    dic = Dictionary(atoms=q, lambda_d=0.01)
    out = reconstruct_rain(ps, dic, np.array([2, 3]), (4, 4))
    assert np.abs(out).max() < 1e-9


def test_reconstruct_single_patch_footprint():
    rg = np.random.default_rng(11)
    q, _ = np.linalg.qr(rg.standard_normal((9, 3)))
    patch = 0.8 * q[:, 1]
    ps = PatchSet(patch_size=3, patches=patch[:, None], centers=np.array([[1, 1]]))
    dic = Dictionary(atoms=q, lambda_d=0.01)
    out = reconstruct_rain(ps, dic, np.array([1]), (3, 3))
    code = sparse_code(patch, dic).coefficients
    expected = (q[:, 1] * code[1]).reshape(3, 3)
    assert np.allclose(out, expected, atol=1e-9)


def test_reconstruct_empty_rain_set():
    ps = PatchSet(patch_size=3, patches=np.zeros((9, 1)), centers=np.array([[1, 1]]))
    with pytest.raises(ValueError):
        reconstruct_rain(ps, Dictionary(atoms=np.eye(9), lambda_d=0.1), np.array([]), (3, 3))


def test_binarize_cases():
    assert not binarize(np.zeros((4, 4)), 0.5).any()
    hot = np.zeros((4, 4))
    hot[1, 2] = 0.9
    mask = binarize(hot, 0.5)
    assert mask[1, 2] and mask.sum() == 1
    ramp = np.linspace(0.0, 1.0, 11)[None, :].repeat(3, axis=0)
    mask = binarize(ramp, 0.5)
    assert np.array_equal(mask[0], ramp[0] > 0.5)
    with pytest.raises(ValueError):
        binarize(ramp, 1.5)


# -- end to end ---------------------------------------------------------------

def test_compute_rdp_deterministic_and_sane():
    clean = natural_image(21, 96, 96)
    rain, gt = synth_streaks(clean, SynthConfig(count=40, seed=2))
    cfg = MaskConfig(epochs=3, seed=0)
    m1 = compute_rdp(rain, cfg)
    m2 = compute_rdp(rain, cfg)
    assert np.array_equal(m1, m2)
    assert m1.shape == rain.shape[:2]
    assert 0 < m1.mean() < 0.5


def test_mask_png_roundtrip(tmp_path):
    rg = np.random.default_rng(12)
    mask = rg.random((9, 13)) < 0.3
    save_mask(mask, tmp_path / "m.png")
    back = load_mask(tmp_path / "m.png")
    assert np.array_equal(mask, back)
