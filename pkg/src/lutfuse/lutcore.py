"""The 4-D multi-modal lookup table and per-pixel fusion by table lookup.

Axes are ordered ``(v, i, g, s)``: visible luminance, IR intensity,
luminance gradient magnitude, scene code. A value ``x`` on any axis maps to
the continuous coordinate ``x / T`` clamped to ``[0, G - 1]``; the cell
floor is clamped to ``[0, G - 2]`` so the upper corner is always in range.
"""

from __future__ import annotations

import itertools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from threadpoolctl import threadpool_limits

from . import _kernels
from .encode import (
    SceneEncoderParams,
    box_scene_feature,
    gradient_encoding,
    intensity_encodings,
    scene_encode,
)
from .imgio import ImagePair, rgb_to_ycbcr, ycbcr_to_rgb

DEFAULT_G = 17
DEFAULT_T = 17.0
AXES = "vigs"
CORNERS = np.array(list(itertools.product((0, 1), repeat=4)), dtype=np.int64)  # (16, 4)


@dataclass
class LutGrid4D:
    entries: np.ndarray  # (G, G, G, G) indexed [v, i, g, s]
    bin_scale: float = DEFAULT_T

    def __post_init__(self):
        e = self.entries
        if e.ndim != 4 or len(set(e.shape)) != 1 or e.shape[0] < 2:
            raise ValueError(f"grid must be (G, G, G, G) with G >= 2, got {e.shape}")
        if not self.bin_scale > 0:
            raise ValueError("bin scale T must be positive")

    @property
    def points(self) -> int:
        return self.entries.shape[0]

    @classmethod
    def average(cls, points: int = DEFAULT_G, bin_scale: float = DEFAULT_T, dtype=np.float32):
        """Grid reproducing (v + i) / 2 at the grid nodes, clamped to [0, 255]."""
        k = np.arange(points, dtype=np.float64)
        vi = np.clip(bin_scale * (k[:, None] + k[None, :]) / 2.0, 0, 255)
        e = np.broadcast_to(vi[:, :, None, None], (points,) * 4)
        return cls(np.ascontiguousarray(e, dtype=dtype), float(bin_scale))

    @classmethod
    def constant(cls, value: float, points: int = DEFAULT_G, bin_scale: float = DEFAULT_T, dtype=np.float32):
        return cls(np.full((points,) * 4, value, dtype=dtype), float(bin_scale))

    def copy(self) -> "LutGrid4D":
        return LutGrid4D(self.entries.copy(), self.bin_scale)

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, LutGrid4D)
            and self.bin_scale == other.bin_scale
            and self.entries.dtype == other.entries.dtype
            and np.array_equal(self.entries, other.entries)
        )


@dataclass
class Encodings:
    n_i: np.ndarray
    n_v: np.ndarray
    g_v: np.ndarray
    s_j: np.ndarray


@dataclass
class LookupCoord:
    coords: np.ndarray  # (..., 4) continuous, in [0, G-1]
    floors: np.ndarray  # (..., 4) int
    fracs: np.ndarray  # (..., 4) in [0, 1]


def to_coords(enc: Encodings, bin_scale: float = DEFAULT_T, points: int = DEFAULT_G) -> LookupCoord:
    vals = np.stack([enc.n_v, enc.n_i, enc.g_v, enc.s_j], axis=-1).astype(np.float64)
    a = np.clip(vals / bin_scale, 0, points - 1)
    k = np.minimum(np.floor(a).astype(np.int64), points - 2)
    return LookupCoord(a, k, a - k)


def corner_weights(fracs: np.ndarray) -> np.ndarray:
    """Interpolation weights of the 16 cell corners, shape ``(..., 16)``.

    Corner ``j`` has offsets ``CORNERS[j]`` along (v, i, g, s).
    """
    f = np.asarray(fracs, dtype=np.float64)[..., None, :]
    return np.prod(np.where(CORNERS == 1, f, 1.0 - f), axis=-1)


def _flat_f64(x) -> np.ndarray:
    return np.ascontiguousarray(np.asarray(x, dtype=np.float64).ravel())


def _flat_float(x) -> np.ndarray:
    # float32 planes go to the kernel as-is; widening to float64 there is exact
    x = np.asarray(x)
    if x.dtype not in (np.float32, np.float64):
        x = x.astype(np.float64)
    return np.ascontiguousarray(x).ravel()


def lookup_values(grid: LutGrid4D, v, i, g, s, out_dtype=np.float64) -> np.ndarray:
    """Interpolated table output for per-pixel axis values (any matching shape)."""
    shape = np.shape(v)
    entries = grid.entries
    if entries.dtype not in (np.float32, np.float64):
        entries = entries.astype(np.float64)
    out = np.empty(int(np.prod(shape)), dtype=np.float64)
    _kernels.lookup_kernel(
        entries, _flat_f64(v), _flat_f64(i), _flat_f64(g), _flat_f64(s), 1.0 / grid.bin_scale, out
    )
    return out.reshape(shape).astype(out_dtype, copy=False)


def lookup(grid: LutGrid4D, coord: LookupCoord) -> np.ndarray:
    """Output at continuous coordinates (as produced by :func:`to_coords`)."""
    c = coord.coords
    unit = LutGrid4D(grid.entries, 1.0)
    return lookup_values(unit, c[..., 0], c[..., 1], c[..., 2], c[..., 3])


def lookup_backward(grid: LutGrid4D, coord: LookupCoord, upstream: float):
    """Gradients of one lookup.

    Returns ``(corner_index, entry_grads, d_out_d_d)``: the 16 corner grid
    indices ``(16, 4)``, ``upstream * weight`` for each, and the derivative
    of the output w.r.t. the continuous s coordinate times ``upstream``.
    """
    k = np.asarray(coord.floors).reshape(4)
    f = np.asarray(coord.fracs, dtype=np.float64).reshape(4)
    idx = k + CORNERS
    w = corner_weights(f)
    e = grid.entries.astype(np.float64)[tuple(idx.T)]
    sign = np.where(CORNERS[:, 3] == 1, 1.0, -1.0)
    other = np.prod(np.where(CORNERS[:, :3] == 1, f[:3], 1.0 - f[:3]), axis=-1)
    return idx, upstream * w, upstream * float(np.sum(sign * other * e))


def lookup_backward_values(grid: LutGrid4D, v, i, g, s, upstream) -> tuple[np.ndarray, np.ndarray]:
    """Batched backward pass.

    Returns the dense entry gradient (float64, grid shape) and
    d(loss)/d(scene value) per pixel, which is zero where the s coordinate
    sits on its clamp.
    """
    shape = np.shape(v)
    entries = grid.entries
    gg = np.zeros(entries.shape, dtype=np.float64)
    dcoord = np.empty(int(np.prod(shape)), dtype=np.float64)
    sf = _flat_f64(s)
    _kernels.lookup_backward_kernel(
        entries, _flat_f64(v), _flat_f64(i), _flat_f64(g), sf,
        1.0 / grid.bin_scale, _flat_f64(upstream), gg, dcoord,
    )
    a = sf / grid.bin_scale
    inside = (a > 0) & (a < grid.points - 1)
    ds = np.where(inside, dcoord / grid.bin_scale, 0.0)
    return gg, ds.reshape(shape)


# -- model ------------------------------------------------------------------

SCENE_ENCODER = "encoder"
SCENE_BOX = "box-mean"


@dataclass
class MmLutModel:
    grid: LutGrid4D
    encoder: SceneEncoderParams | None
    downsample: int = 4
    scene_feature: str = SCENE_ENCODER
    metadata: dict = field(default_factory=dict)
    version: int = 1

    def __post_init__(self):
        if self.scene_feature == SCENE_ENCODER and (self.encoder is None or self.encoder.num_blocks == 0):
            raise ValueError("encoder scene feature requires encoder parameters")
        if self.scene_feature not in (SCENE_ENCODER, SCENE_BOX):
            raise ValueError(f"unknown scene feature {self.scene_feature!r}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, MmLutModel):
            return NotImplemented
        enc_eq = (self.encoder or SceneEncoderParams([], [])) == (other.encoder or SceneEncoderParams([], []))
        return (
            self.grid == other.grid
            and enc_eq
            and self.downsample == other.downsample
            and self.scene_feature == other.scene_feature
            and self.metadata == other.metadata
            and self.version == other.version
        )


def encode_pair(model: MmLutModel, pair: ImagePair) -> Encodings:
    n_i, n_v = intensity_encodings(pair)
    g_v = gradient_encoding(n_v)
    if model.scene_feature == SCENE_BOX:
        s_j = box_scene_feature(n_v, n_i)
    else:
        with threadpool_limits(limits=1):
            s_j, _ = scene_encode((n_v, n_i), model.encoder, model.downsample)
    return Encodings(n_i, n_v, g_v, s_j.astype(np.float32))


def _lookup_parallel(grid: LutGrid4D, enc: Encodings, threads: int) -> np.ndarray:
    h, w = enc.n_v.shape
    flat = [_flat_float(x) for x in (enc.n_v, enc.n_i, enc.g_v, enc.s_j)]
    out = np.empty(h * w, dtype=np.float64)
    inv_t = 1.0 / grid.bin_scale
    if threads <= 1:
        _kernels.lookup_kernel(grid.entries, *flat, inv_t, out)
    else:
        # row-aligned chunks; each pixel is computed independently
        bounds = np.linspace(0, h, threads + 1).astype(int) * w

        def run(j):
            lo, hi = bounds[j], bounds[j + 1]
            _kernels.lookup_kernel(grid.entries, *(x[lo:hi] for x in flat), inv_t, out[lo:hi])

        with ThreadPoolExecutor(threads) as ex:
            list(ex.map(run, range(threads)))
    return out.reshape(h, w)


def fuse_luminance(model: MmLutModel, pair: ImagePair, threads: int = 1) -> np.ndarray:
    enc = encode_pair(model, pair)
    y = _lookup_parallel(model.grid, enc, threads)
    return np.clip(y, 0, 255).astype(np.float32)


def fuse_image(model: MmLutModel, pair: ImagePair, threads: int = 1) -> np.ndarray:
    """Fused RGB image: looked-up luminance with the visible image's chroma."""
    y = fuse_luminance(model, pair, threads)
    _, cb, cr = rgb_to_ycbcr(pair.vis)
    return ycbcr_to_rgb(y, cb, cr)


def monotonicity_violations(entries: np.ndarray, tol: float = 0.0) -> int:
    """Number of adjacent pairs along any axis where the entry decreases by more than ``tol``."""
    e = np.asarray(entries, dtype=np.float64)
    return int(sum(np.count_nonzero(-np.diff(e, axis=ax) > tol) for ax in range(4)))
