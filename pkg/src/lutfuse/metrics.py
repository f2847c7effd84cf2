"""Fusion quality metrics: EN, MI, CC, SSIM and Q^AB/F.

All metrics take luminance planes on the [0, 255] scale. The two-source
metrics compare the fused plane with the IR plane and with the visible
luminance.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass

import numpy as np
from scipy import ndimage

from .errors import DimensionMismatchError
from .train.losses import ssim

# Xydeas-Petrovic sigmoid constants (edge strength, orientation)
GAMMA_G, KAPPA_G, SIGMA_G = 0.9994, -15.0, 0.5
GAMMA_A, KAPPA_A, SIGMA_A = 0.9879, -22.0, 0.8


def _levels(img) -> np.ndarray:
    return np.clip(np.rint(np.asarray(img, np.float64)), 0, 255).astype(np.int64).ravel()


def _entropy_from_counts(counts: np.ndarray) -> float:
    # sorted so the sum does not depend on bin order
    p = np.sort(counts[counts > 0]).astype(np.float64) / counts.sum()
    return float(-np.sum(p * np.log2(p)))


def _same_shape(*imgs) -> None:
    shapes = {np.shape(i) for i in imgs}
    if len(shapes) != 1:
        raise DimensionMismatchError(f"metric inputs differ in shape: {sorted(shapes)}")


def entropy(img) -> float:
    """Shannon entropy in bits of the 256-bin histogram of rounded values."""
    return _entropy_from_counts(np.bincount(_levels(img), minlength=256))


def mutual_information_pair(a, b) -> float:
    _same_shape(a, b)
    la, lb = _levels(a), _levels(b)
    joint = np.bincount(la * 256 + lb, minlength=256 * 256)
    ha = _entropy_from_counts(np.bincount(la, minlength=256))
    hb = _entropy_from_counts(np.bincount(lb, minlength=256))
    return max(0.0, ha + hb - _entropy_from_counts(joint))


def mutual_information(fused, ir, vis_y) -> float:
    """MI(F, IR) + MI(F, VIS), base 2."""
    _same_shape(fused, ir, vis_y)
    return mutual_information_pair(fused, ir) + mutual_information_pair(fused, vis_y)


def pearson(a, b) -> float:
    """Pearson correlation; 0 when either argument is constant."""
    a = np.asarray(a, np.float64).ravel()
    b = np.asarray(b, np.float64).ravel()
    a = a - a.mean()
    b = b - b.mean()
    den = np.sqrt(np.dot(a, a) * np.dot(b, b))
    if den == 0:
        return 0.0
    return float(np.clip(np.dot(a, b) / den, -1.0, 1.0))


def correlation_coefficient(fused, ir, vis_y) -> float:
    _same_shape(fused, ir, vis_y)
    return 0.5 * (pearson(fused, ir) + pearson(fused, vis_y))


def ssim_metric(fused, ir, vis_y) -> float:
    _same_shape(fused, ir, vis_y)
    return 0.5 * (ssim(fused, ir) + ssim(fused, vis_y))


def _edges(img):
    x = np.asarray(img, np.float64)
    sx = ndimage.sobel(x, axis=1, mode="nearest")
    sy = ndimage.sobel(x, axis=0, mode="nearest")
    g = np.hypot(sx, sy)
    with np.errstate(divide="ignore", invalid="ignore"):
        alpha = np.where(sx == 0, np.pi / 2, np.arctan(sy / np.where(sx == 0, 1.0, sx)))
    return g, alpha


def _preservation(g_src, a_src, g_f, a_f) -> np.ndarray:
    with np.errstate(divide="ignore", invalid="ignore"):
        strength = np.where(g_src > g_f, g_f / g_src, np.where(g_f > 0, g_src / g_f, 0.0))
    orient = 1.0 - np.abs(a_src - a_f) / (np.pi / 2)
    q_g = GAMMA_G / (1.0 + np.exp(KAPPA_G * (strength - SIGMA_G)))
    q_a = GAMMA_A / (1.0 + np.exp(KAPPA_A * (orient - SIGMA_A)))
    return q_g * q_a


def qabf(fused, ir, vis_y) -> float:
    """Edge-preservation quality Q^AB/F; 0 when neither source has any edge."""
    _same_shape(fused, ir, vis_y)
    g_f, a_f = _edges(fused)
    g_a, a_a = _edges(ir)
    g_b, a_b = _edges(vis_y)
    den = np.sum(g_a + g_b)
    if den == 0:
        return 0.0
    num = np.sum(_preservation(g_a, a_a, g_f, a_f) * g_a + _preservation(g_b, a_b, g_f, a_f) * g_b)
    return float(np.clip(num / den, 0.0, 1.0))


@dataclass
class MetricsReport:
    mi: float
    en: float
    cc: float
    ssim: float
    qabf: float

    def as_dict(self) -> dict:
        return asdict(self)


METRIC_NAMES = ("mi", "en", "cc", "ssim", "qabf")


def evaluate(fused, ir, vis_y) -> MetricsReport:
    return MetricsReport(
        mi=mutual_information(fused, ir, vis_y),
        en=entropy(fused),
        cc=correlation_coefficient(fused, ir, vis_y),
        ssim=ssim_metric(fused, ir, vis_y),
        qabf=qabf(fused, ir, vis_y),
    )


def aggregate(reports: list[MetricsReport]) -> dict:
    """``{"mi": {"mean": ..., "std": ...}, ...}`` (population std)."""
    out = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in reports], dtype=np.float64)
        out[name] = {"mean": float(vals.mean()), "std": float(vals.std())}
    return out
