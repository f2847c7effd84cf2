import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from lutfuse.errors import DimensionMismatchError, ShapeMismatchError
from lutfuse.train.losses import (
    gaussian_window,
    intensity_loss,
    monotonicity_regularizer,
    ssim,
    ssim_loss,
    tv_regularizer,
)


def ssim_reference(x, y, data_range=255.0):
    """Window-by-window SSIM with an explicit 2-D Gaussian, no filter reuse."""
    k = np.exp(-((np.arange(11) - 5.0) ** 2) / (2 * 1.5**2))
    w2 = np.outer(k, k)
    w2 /= w2.sum()
    c1, c2 = (0.01 * data_range) ** 2, (0.03 * data_range) ** 2
    vals = []
    for r in range(x.shape[0] - 10):
        for c in range(x.shape[1] - 10):
            a, b = x[r : r + 11, c : c + 11], y[r : r + 11, c : c + 11]
            ma, mb = np.sum(w2 * a), np.sum(w2 * b)
            va = np.sum(w2 * (a - ma) ** 2)
            vb = np.sum(w2 * (b - mb) ** 2)
            cov = np.sum(w2 * (a - ma) * (b - mb))
            vals.append((2 * ma * mb + c1) * (2 * cov + c2) / ((ma**2 + mb**2 + c1) * (va + vb + c2)))
    return float(np.mean(vals))


def test_gaussian_window():
    k = gaussian_window()
    assert k.shape == (11,) and abs(k.sum() - 1) < 1e-15 and k.argmax() == 5


def test_ssim_matches_reference(rng):
    for _ in range(5):
        x = rng.uniform(0, 255, (19, 23))
        y = np.clip(x + rng.normal(0, 30, x.shape), 0, 255)
        assert abs(ssim(x, y) - ssim_reference(x, y)) < 1e-6


def test_ssim_identity_and_errors(rng):
    x = rng.uniform(0, 255, (16, 16))
    assert abs(ssim(x, x) - 1.0) < 1e-12
    with pytest.raises(ShapeMismatchError):
        ssim(np.zeros((10, 20)), np.zeros((10, 20)))
    with pytest.raises(DimensionMismatchError):
        ssim(np.zeros((12, 12)), np.zeros((12, 13)))


def test_intensity_loss_value_and_gradient(rng):
    t = rng.uniform(0, 1, (3, 5))
    s = rng.uniform(0, 1, (3, 5))
    val, g = intensity_loss(t, s)
    assert val == pytest.approx(np.mean(np.abs(s - t)))
    np.testing.assert_allclose(g, np.sign(s - t) / 15)


def test_ssim_loss_gradient_fd(rng):
    t = rng.uniform(0, 255, (2, 14, 15))
    s = np.clip(t + rng.normal(0, 25, t.shape), 0, 255)
    val, g = ssim_loss(t, s)
    assert val == pytest.approx(1 - np.mean([ssim(t[k], s[k]) for k in range(2)]), abs=1e-12)
    h = 1e-3
    fd = np.zeros_like(s)
    for idx in np.ndindex(s.shape):
        sp, sm = s.copy(), s.copy()
        sp[idx] += h
        sm[idx] -= h
        fd[idx] = (ssim_loss(t, sp)[0] - ssim_loss(t, sm)[0]) / (2 * h)
    assert np.linalg.norm(g - fd) / np.linalg.norm(fd) < 1e-6


def test_tv_zero_on_constant_and_fd(rng):
    val, g = tv_regularizer(np.full((4,) * 4, 0.3))
    assert val == 0.0 and np.all(g == 0)
    e = rng.uniform(0, 1, (3,) * 4)
    val, g = tv_regularizer(e)
    h = 1e-6
    for idx in [(0, 0, 0, 0), (1, 1, 1, 1), (2, 0, 1, 2)]:
        ep, em = e.copy(), e.copy()
        ep[idx] += h
        em[idx] -= h
        fd = (tv_regularizer(ep)[0] - tv_regularizer(em)[0]) / (2 * h)
        assert abs(g[idx] - fd) < 1e-7


def test_monotonicity_zero_on_monotone_grid():
    k = np.arange(5.0)
    e = k[:, None, None, None] + 2 * k[None, :, None, None] + 0.5 * k[None, None, None, :] + 0 * k[None, None, :, None]
    val, g, n = monotonicity_regularizer(e)
    assert val == 0.0 and n == 0 and np.all(g == 0)


def test_monotonicity_penalty_and_gradient(rng):
    e = rng.uniform(0, 1, (3,) * 4)
    val, g, n = monotonicity_regularizer(e)
    drops = sum(np.clip(-np.diff(e, axis=a), 0, None).sum() for a in range(4))
    assert val == pytest.approx(drops / e.size)
    assert n == sum(int((-np.diff(e, axis=a) > 0).sum()) for a in range(4))
    h = 1e-7
    for idx in [(0, 1, 2, 0), (1, 1, 1, 1), (2, 2, 0, 1)]:
        ep, em = e.copy(), e.copy()
        ep[idx] += h
        em[idx] -= h
        fd = (monotonicity_regularizer(ep)[0] - monotonicity_regularizer(em)[0]) / (2 * h)
        assert abs(g[idx] - fd) < 1e-6


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (3, 3, 3, 3), elements=st.floats(0, 1)))
def test_regularizers_nonnegative(e):
    assert tv_regularizer(e)[0] >= 0
    assert monotonicity_regularizer(e)[0] >= 0
