"""Distillation losses and table regularizers with analytic gradients.

Every function returns ``(value, gradient)``; the gradient is w.r.t. the
student image or the grid entries and has the same shape.
"""

from __future__ import annotations

import numpy as np

from .. import _kernels
from ..errors import DimensionMismatchError, ShapeMismatchError

WINDOW = 11
SIGMA = 1.5


def gaussian_window(size: int = WINDOW, sigma: float = SIGMA) -> np.ndarray:
    x = np.arange(size) - (size - 1) / 2.0
    k = np.exp(-(x**2) / (2 * sigma**2))
    return k / k.sum()


_K = gaussian_window()


def filter_valid(x: np.ndarray, k: np.ndarray = _K) -> np.ndarray:
    """Separable 'valid' correlation over the last two axes (float64)."""
    x = np.asarray(x, np.float64)
    lead, (h, w) = x.shape[:-2], x.shape[-2:]
    flat = np.ascontiguousarray(x.reshape((-1, h, w)))
    out = np.empty((flat.shape[0], h - k.size + 1, w - k.size + 1))
    _kernels.sep_valid(flat, np.ascontiguousarray(k, np.float64), out)
    return out.reshape(lead + out.shape[1:])


def filter_full(x: np.ndarray, k: np.ndarray = _K) -> np.ndarray:
    """Adjoint of :func:`filter_valid` (zero-padded 'full' convolution)."""
    r = k.size - 1
    pad = [(0, 0)] * (np.ndim(x) - 2) + [(r, r), (r, r)]
    return filter_valid(np.pad(np.asarray(x, np.float64), pad), k[::-1])


def _check_pair(a, b):
    if np.shape(a) != np.shape(b):
        raise DimensionMismatchError(f"shape mismatch: {np.shape(a)} vs {np.shape(b)}")


def intensity_loss(teacher: np.ndarray, student: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean absolute difference and its subgradient (zero at ties)."""
    _check_pair(teacher, student)
    diff = np.asarray(student, np.float64) - np.asarray(teacher, np.float64)
    return float(np.mean(np.abs(diff))), np.sign(diff) / diff.size


def ssim_stats(x: np.ndarray, y: np.ndarray, data_range: float = 255.0):
    """Windowed SSIM map over valid windows plus the intermediates for the gradient."""
    c1 = (0.01 * data_range) ** 2
    c2 = (0.03 * data_range) ** 2
    mx, my = filter_valid(x), filter_valid(y)
    vx = filter_valid(x * x) - mx * mx
    vy = filter_valid(y * y) - my * my
    cxy = filter_valid(x * y) - mx * my
    a1 = 2 * mx * my + c1
    a2 = 2 * cxy + c2
    b1 = mx * mx + my * my + c1
    b2 = vx + vy + c2
    s = a1 * a2 / (b1 * b2)
    return s, (mx, my, a1, a2, b1, b2)


def ssim(x: np.ndarray, y: np.ndarray, data_range: float = 255.0) -> float:
    """Mean SSIM over all 11x11 windows fully inside the image (Gaussian, sigma 1.5)."""
    _check_pair(x, y)
    if min(np.shape(x)[-2:]) < WINDOW:
        raise ShapeMismatchError(f"SSIM needs at least {WINDOW}x{WINDOW} pixels, got {np.shape(x)}")
    s, _ = ssim_stats(np.asarray(x, np.float64), np.asarray(y, np.float64), data_range)
    return float(s.mean())


def ssim_loss(teacher: np.ndarray, student: np.ndarray, data_range: float = 255.0):
    """``1 - mean SSIM`` and its gradient w.r.t. ``student``.

    Leading axes are treated as a batch; the mean runs over every window of
    every image.
    """
    _check_pair(teacher, student)
    if min(np.shape(teacher)[-2:]) < WINDOW:
        raise ShapeMismatchError(f"SSIM needs at least {WINDOW}x{WINDOW} pixels, got {np.shape(teacher)}")
    x = np.asarray(teacher, np.float64)
    y = np.asarray(student, np.float64)
    s, (mx, my, a1, a2, b1, b2) = ssim_stats(x, y, data_range)
    # partials of each window's SSIM w.r.t. mu_y, var_y, cov_xy
    d_mu = 2 * mx * a2 / (b1 * b2) - 2 * my * s / b1
    d_var = -s / b2
    d_cov = 2 * a1 / (b1 * b2)
    grad = filter_full(d_mu - 2 * d_var * my - d_cov * mx) + 2 * y * filter_full(d_var) + x * filter_full(d_cov)
    return float(1.0 - s.mean()), -grad / s.size


def grid_regularizers(entries: np.ndarray, tol: float = 0.0):
    """Both table regularizers in one pass.

    Returns ``(tv, tv_grad, mono, mono_grad, violations)`` with values and
    gradients divided by the entry count.
    """
    e = np.ascontiguousarray(entries, np.float64)
    g_tv = np.zeros(e.size)
    g_m = np.zeros(e.size)
    tv, mono, viol = _kernels.grid_regularizers(e.ravel(), np.array(e.shape, np.int64), float(tol), g_tv, g_m)
    n = e.size
    return tv / n, g_tv.reshape(e.shape) / n, mono / n, g_m.reshape(e.shape) / n, int(viol)


def tv_regularizer(entries: np.ndarray) -> tuple[float, np.ndarray]:
    """Squared adjacent differences summed over all axes, divided by the entry count."""
    tv, g, _, _, _ = grid_regularizers(entries)
    return tv, g


def monotonicity_regularizer(entries: np.ndarray, tol: float = 0.0):
    """Hinge penalty ``max(0, e[k] - e[k+1])`` summed over all axes, divided by the entry count.

    Returns ``(value, grad, violations)``; ``violations`` counts pairs whose
    decrease exceeds ``tol``.
    """
    _, _, m, g, viol = grid_regularizers(entries, tol)
    return m, g, viol
