"""Classical fusion teachers whose output the lookup table is trained to imitate."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .encode import intensity_encodings
from .errors import ConfigError, LutFuseError
from .imgio import ImagePair

BINOMIAL = np.array([1.0, 4.0, 6.0, 4.0, 1.0]) / 16.0

_ALIASES = {
    "avg": "average",
    "average": "average",
    "maxlum": "max-luminance",
    "max-luminance": "max-luminance",
    "max": "max-luminance",
    "lappyr": "laplacian-pyramid",
    "laplacian-pyramid": "laplacian-pyramid",
}


class PyramidTooDeepError(LutFuseError):
    exit_code = 17


@dataclass(frozen=True)
class TeacherKind:
    name: str
    levels: int = 4

    def __post_init__(self):
        if self.name not in _ALIASES:
            raise ConfigError(f"unknown teacher {self.name!r}; choose from avg, maxlum, lappyr")
        object.__setattr__(self, "name", _ALIASES[self.name])
        if self.levels < 1:
            raise PyramidTooDeepError("pyramid levels must be >= 1")

    @property
    def short(self) -> str:
        return {"average": "avg", "max-luminance": "maxlum", "laplacian-pyramid": "lappyr"}[self.name]


def _reduce(x: np.ndarray) -> np.ndarray:
    y = ndimage.correlate1d(x, BINOMIAL, axis=0, mode="nearest")
    y = ndimage.correlate1d(y, BINOMIAL, axis=1, mode="nearest")
    return y[::2, ::2]


def _expand_axis(c: np.ndarray, n: int, axis: int) -> np.ndarray:
    c = np.moveaxis(c, axis, 0)
    cp = np.concatenate([c[:1], c, c[-1:]], axis=0)
    z = np.zeros((2 * cp.shape[0],) + cp.shape[1:])
    z[::2] = cp
    z = ndimage.correlate1d(z, 2.0 * BINOMIAL, axis=0, mode="constant")
    return np.moveaxis(z[2 : 2 + n], 0, axis)


def _expand(c: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    return _expand_axis(_expand_axis(c, shape[0], 0), shape[1], 1)


def laplacian_pyramid(x: np.ndarray, levels: int) -> list[np.ndarray]:
    """Band-pass levels followed by the low-pass base (``levels + 1`` arrays)."""
    h, w = x.shape
    if 2**levels > min(h, w):
        raise PyramidTooDeepError(f"{levels} pyramid levels too deep for a {w}x{h} image")
    bands = []
    g = np.asarray(x, dtype=np.float64)
    for _ in range(levels):
        low = _reduce(g)
        bands.append(g - _expand(low, g.shape))
        g = low
    bands.append(g)
    return bands


def reconstruct(pyr: list[np.ndarray]) -> np.ndarray:
    x = pyr[-1]
    for band in reversed(pyr[:-1]):
        x = _expand(x, band.shape) + band
    return x


def fuse_planes(kind: TeacherKind, n_v: np.ndarray, n_i: np.ndarray) -> np.ndarray:
    """Teacher fused luminance from visible luminance and IR planes."""
    v = np.asarray(n_v, np.float64)
    i = np.asarray(n_i, np.float64)
    if kind.name == "average":
        out = (v + i) / 2.0
    elif kind.name == "max-luminance":
        out = np.maximum(v, i)
    else:
        pv, pi = laplacian_pyramid(v, kind.levels), laplacian_pyramid(i, kind.levels)
        fused = [np.where(np.abs(a) >= np.abs(b), a, b) for a, b in zip(pv[:-1], pi[:-1])]
        fused.append((pv[-1] + pi[-1]) / 2.0)
        out = reconstruct(fused)
    return np.clip(out, 0, 255).astype(np.float32)


def teacher_fuse(kind: TeacherKind | str, pair: ImagePair) -> np.ndarray:
    if isinstance(kind, str):
        kind = TeacherKind(kind)
    n_i, n_v = intensity_encodings(pair)
    return fuse_planes(kind, n_v, n_i)
