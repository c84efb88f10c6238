import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from derainkit.filters import (
    ACTION_SET,
    FilterSpec,
    N_ACTIONS,
    PIXEL_STEP,
    action_planes,
    apply_action,
    apply_spec,
    bilateral_filter,
    box_filter,
    gaussian_filter,
    masked_action_values,
    median_filter,
)


def impulse(h=5, w=5, c=1):
    img = np.zeros((h, w, c))
    img[h // 2, w // 2] = 1.0
    return img


def test_box_constant_and_kernel1():
    const = np.full((7, 7, 3), 0.42)
    assert np.allclose(box_filter(const, 5), 0.42)
    img = np.random.default_rng(0).random((6, 6, 1))
    assert np.allclose(box_filter(img, 1), img)


def test_box_impulse_center():
    out = box_filter(impulse(), 5)
    assert out[2, 2, 0] == pytest.approx(1 / 25, rel=1e-12)


def test_box_rejects_even_kernel():
    with pytest.raises(ValueError):
        box_filter(impulse(), 4)


def test_gaussian_constant_unchanged():
    const = np.full((6, 6, 1), 0.3)
    assert np.allclose(gaussian_filter(const, 5, 1.5), 0.3, atol=1e-12)


def test_gaussian_impulse_matches_kernel_formula():
    sigma = 0.5
    x = np.arange(5.0) - 2
    g = np.exp(-(x * x) / (2 * sigma * sigma))
    w2 = np.outer(g, g)
    w2 /= w2.sum()
    out = gaussian_filter(impulse(), 5, sigma)
    assert out[2, 2, 0] == pytest.approx(w2[2, 2], rel=1e-10)
    assert out[1, 2, 0] == pytest.approx(w2[1, 2], rel=1e-10)


def test_gaussian_step_no_overshoot():
    step = np.zeros((8, 12, 1))
    step[:, 6:] = 1.0
    out = gaussian_filter(step, 5, 1.5)
    assert out.min() >= 0.0 and out.max() <= 1.0
    assert np.all(np.diff(out[3, :, 0]) >= -1e-12)


def test_gaussian_rejects_bad_sigma():
    with pytest.raises(ValueError):
        gaussian_filter(impulse(), 5, 0.0)


def test_median_constant_and_impulse():
    const = np.full((6, 6, 1), 0.77)
    assert np.allclose(median_filter(const, 5), 0.77)
    flat = np.full((9, 9, 1), 0.2)
    flat[4, 4] = 1.0
    out = median_filter(flat, 5)
    assert np.allclose(out, 0.2)


def test_median_checkerboard_window_majority():
    img = np.indices((6, 6)).sum(axis=0) % 2
    img = img[:, :, None].astype(np.float64)
    out = median_filter(img, 3)
    r = 1
    padded = np.pad(img[:, :, 0], r, mode="edge")
    for y in range(6):
        for x in range(6):
            window = padded[y : y + 3, x : x + 3].ravel()
            majority = 1.0 if (window == 1.0).sum() > 4 else 0.0
            assert out[y, x, 0] == majority


def test_bilateral_constant_unchanged():
    const = np.full((6, 6, 3), 0.5)
    assert np.allclose(bilateral_filter(const, 5, 0.1, 5.0), 0.5, atol=1e-12)


def test_bilateral_large_sigma_c_matches_gaussian():
    img = np.random.default_rng(1).random((10, 10, 1))
    near_gauss = bilateral_filter(img, 5, 1e6, 1.5)
    gauss = gaussian_filter(img, 5, 1.5)
    assert np.abs(near_gauss - gauss).max() < 1e-6


def test_bilateral_preserves_step_edge():
    img = np.zeros((5, 12, 1))
    img[:, 6:] = 0.8
    out = bilateral_filter(img, 5, 0.1, 5.0)
    moved = np.abs(out - img)[:, 4:8, 0]
    assert moved.max() < 0.1 * 0.8


def test_bilateral_direct_weighted_sum_profile():
    row = np.array([0.0, 0.0, 0.0, 0.8, 0.8, 0.8])
    img = np.tile(row, (5, 1))[:, :, None]
    sigma_c, sigma_s = 0.1, 5.0
    out = bilateral_filter(img, 5, sigma_c, sigma_s)
    y, x = 2, 2
    padded = np.pad(img[:, :, 0], 2, mode="edge")
    num = den = 0.0
    for dy in range(-2, 3):
        for dx in range(-2, 3):
            v = padded[y + dy + 2, x + dx + 2]
            w = np.exp(-(dy * dy + dx * dx) / (2 * sigma_s ** 2)) * np.exp(
                -((v - img[y, x, 0]) ** 2) / (2 * sigma_c ** 2)
            )
            num += w * v
            den += w
    assert out[y, x, 0] == pytest.approx(num / den, rel=1e-10)


@given(st.integers(0, 2 ** 32 - 1))
@settings(max_examples=25, deadline=None)
def test_filters_stay_in_range(seed):
    rg = np.random.default_rng(seed)
    img = rg.random((7, 8, 3))
    for idx in range(1, N_ACTIONS + 1):
        out = apply_spec(img, ACTION_SET[idx])
        assert out.min() >= 0.0 and out.max() <= 1.0


def test_filters_idempotent_on_constants():
    const = np.full((6, 6, 1), 0.25)
    for idx in (1, 2, 3, 4, 5, 6):
        assert np.allclose(apply_spec(const, ACTION_SET[idx]), 0.25, atol=1e-12)


def test_apply_action_trivial_actions():
    img = np.random.default_rng(2).random((6, 6, 3))
    assert np.array_equal(apply_action(img, 9, (2, 3)), img[2, 3])
    top = np.ones((3, 3, 1))
    assert apply_action(top, 7, (1, 1))[0] == 1.0
    assert apply_action(img, 7, (0, 0))[0] == pytest.approx(img[0, 0, 0] + PIXEL_STEP)


def test_apply_action_box_impulse():
    out = apply_action(impulse(), 1, (2, 2))
    assert out[0] == pytest.approx(1 / 25, rel=1e-12)


def test_apply_action_bad_inputs():
    img = impulse()
    with pytest.raises(ValueError):
        apply_action(img, 0, (0, 0))
    with pytest.raises(ValueError):
        apply_action(img, 10, (0, 0))
    with pytest.raises(ValueError):
        apply_action(img, 1, (9, 0))


@pytest.mark.parametrize("dtype", [np.float32, np.float64])
def test_masked_values_match_whole_image_bitwise(dtype):
    rg = np.random.default_rng(3)
    img = rg.random((14, 17, 3)).astype(dtype)
    planes = action_planes(img)
    mask = rg.random((14, 17)) < 0.4
    ys, xs = np.nonzero(mask)
    vals = masked_action_values(img, ys, xs)
    for a in range(N_ACTIONS):
        assert np.array_equal(planes[a][ys, xs], vals[a]), f"action {a + 1}"


def test_apply_action_equals_whole_image_everywhere():
    img = np.random.default_rng(4).random((6, 5, 1))
    for idx in (1, 4, 6):
        plane = apply_spec(img, ACTION_SET[idx])
        for y in range(6):
            for x in range(5):
                assert np.array_equal(apply_action(img, idx, (y, x)), plane[y, x])


def test_filterspec_validation():
    with pytest.raises(ValueError):
        FilterSpec("gaussian", kernel=5, sigma=-1.0)
    with pytest.raises(ValueError):
        FilterSpec("bilateral", kernel=4, sigma_c=0.1, sigma_s=5.0)
    with pytest.raises(ValueError):
        FilterSpec("sharpen")


def test_table_parameters():
    assert ACTION_SET[1].kind == "box" and ACTION_SET[1].kernel == 5
    assert ACTION_SET[2].sigma_c == 1.0 and ACTION_SET[2].sigma_s == 5.0
    assert ACTION_SET[3].sigma_c == 0.1 and ACTION_SET[3].sigma_s == 5.0
    assert ACTION_SET[4].kind == "median"
    assert ACTION_SET[5].sigma == 1.5 and ACTION_SET[6].sigma == 0.5
    assert ACTION_SET[7].kind == "increment"
    assert ACTION_SET[8].kind == "decrement"
    assert ACTION_SET[9].kind == "identity"
