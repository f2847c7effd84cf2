"""Seeded synthetic infrared/visible pairs for tests, demos and benchmarks."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from scipy import ndimage

from .imgio import ImagePair, save_png, ycbcr_to_rgb


def _field(rng: np.random.Generator, shape, sigma: float) -> np.ndarray:
    f = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    # rank-equalize so the plane covers [0, 255] roughly uniformly
    ranks = np.argsort(np.argsort(f, axis=None)).reshape(shape)
    return ranks * (255.0 / (f.size - 1))


def _blobs(rng: np.random.Generator, shape, count: int) -> tuple[np.ndarray, np.ndarray]:
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    mask = np.zeros(shape, bool)
    for _ in range(count):
        cy, cx = rng.uniform(0, h), rng.uniform(0, w)
        ry, rx = rng.uniform(3, h / 6), rng.uniform(3, w / 6)
        if rng.random() < 0.5:
            mask |= ((yy - cy) / ry) ** 2 + ((xx - cx) / rx) ** 2 <= 1
        else:
            mask |= (np.abs(yy - cy) <= ry) & (np.abs(xx - cx) <= rx)
    return mask, rng.uniform(0, 255, size=1)


def synthetic_pair(
    rng: np.random.Generator, height: int = 160, width: int = 160, scale: tuple[float, float] = (4.0, 14.0)
) -> ImagePair:
    """One pair of rank-equalized smooth fields with a few sharp blobs.

    ``scale`` bounds the Gaussian correlation length (pixels) of the
    luminance and IR fields; smaller values put more of the joint value
    range inside any one crop.
    """
    shape = (height, width)
    y = _field(rng, shape, rng.uniform(*scale))
    ir = 0.6 * _field(rng, shape, rng.uniform(*scale)) + 0.4 * y * rng.uniform(0, 1)
    ir = ir * (255.0 / max(ir.max(), 1e-9))
    for plane in (y, ir):
        mask, val = _blobs(rng, shape, int(rng.integers(1, 5)))
        plane[mask] = ndimage.gaussian_filter(np.where(mask, val[0], plane), 1.0)[mask]
    cb = 128 + 40 * (_field(rng, shape, 20) / 127.5 - 1)
    cr = 128 + 40 * (_field(rng, shape, 20) / 127.5 - 1)
    vis = ycbcr_to_rgb(y, cb, cr)
    return ImagePair(np.clip(ir, 0, 255).astype(np.float32), vis)


def synthetic_dataset(
    count: int, seed: int, height: int = 160, width: int = 160, scale: tuple[float, float] = (4.0, 14.0)
) -> list[ImagePair]:
    rng = np.random.default_rng(seed)
    return [
        ImagePair(p.ir, p.vis, f"{k:04d}")
        for k, p in ((k, synthetic_pair(rng, height, width, scale)) for k in range(count))
    ]


def write_dataset(pairs: list[ImagePair], root: str | Path) -> None:
    """Write pairs as ``<root>/ir/<name>.png`` and ``<root>/vis/<name>.png`` (rounded to 8 bits)."""
    root = Path(root)
    for k, p in enumerate(pairs):
        name = p.name or f"{k:04d}"
        save_png(root / "ir" / f"{name}.png", p.ir)
        save_png(root / "vis" / f"{name}.png", p.vis)


def quantize_pair(pair: ImagePair) -> ImagePair:
    """Round to 8-bit levels, as a PNG round trip would."""
    return ImagePair(
        np.clip(np.rint(pair.ir), 0, 255).astype(np.float32),
        np.clip(np.rint(pair.vis), 0, 255).astype(np.float32),
        pair.name,
    )
