"""Quantization baseline: fill the 4-D grid by binning teacher outputs.

Every pixel of every training pair is mapped to its nearest grid node and
the teacher's fused luminance there is averaged per cell. Cells no pixel
reached are filled by repeatedly averaging their filled axis-neighbours.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .encode import SceneEncoderParams, box_scene_feature, gradient_encoding, intensity_encodings, scene_encode
from .errors import EmptyDatasetError
from .imgio import ImagePair
from .lutcore import DEFAULT_G, DEFAULT_T, SCENE_BOX, SCENE_ENCODER, LutGrid4D, MmLutModel
from .teacher import TeacherKind, teacher_fuse

__all__ = [
    "QuantAccumulator",
    "QuantResult",
    "SceneFeature",
    "box_scene_feature",
    "build_quantized_lut",
    "fill_empty",
    "quantized_model",
]

FROZEN_ENCODER = "frozen-encoder"


@dataclass(frozen=True)
class SceneFeature:
    """Source of the fourth coordinate: the fixed box mean or a frozen encoder."""

    kind: str = SCENE_BOX
    encoder: SceneEncoderParams | None = None
    downsample: int = 4
    box_size: int = 11

    def __post_init__(self):
        if self.kind not in (SCENE_BOX, FROZEN_ENCODER):
            raise ValueError(f"unknown scene feature {self.kind!r}")
        if self.kind == FROZEN_ENCODER and self.encoder is None:
            raise ValueError("frozen-encoder scene feature needs encoder parameters")
        if self.box_size % 2 != 1:
            raise ValueError("box window must be odd-sized")

    def __call__(self, n_v: np.ndarray, n_i: np.ndarray) -> np.ndarray:
        if self.kind == SCENE_BOX:
            return box_scene_feature(n_v, n_i, self.box_size)
        s, _ = scene_encode((n_v, n_i), self.encoder, self.downsample)
        return s


class QuantAccumulator:
    """Per-cell running sum and count over the ``G**4`` cells."""

    def __init__(self, points: int = DEFAULT_G, bin_scale: float = DEFAULT_T):
        self.points = points
        self.bin_scale = float(bin_scale)
        self.sums = np.zeros(points**4, dtype=np.float64)
        self.counts = np.zeros(points**4, dtype=np.int64)

    def cell_index(self, coords: Sequence[np.ndarray]) -> np.ndarray:
        """Flat index of the nearest node for each pixel; coords are (v, i, g, s)."""
        flat = np.zeros(np.size(coords[0]), dtype=np.int64)
        for c in coords:
            a = np.clip(np.asarray(c, np.float64).ravel() / self.bin_scale, 0, self.points - 1)
            flat = flat * self.points + np.rint(a).astype(np.int64)
        return flat

    def add(self, coords: Sequence[np.ndarray], values: np.ndarray) -> None:
        idx = self.cell_index(coords)
        n = self.points**4
        self.sums += np.bincount(idx, weights=np.asarray(values, np.float64).ravel(), minlength=n)
        self.counts += np.bincount(idx, minlength=n)

    def merge(self, other: "QuantAccumulator") -> None:
        self.sums += other.sums
        self.counts += other.counts

    @property
    def covered(self) -> int:
        return int(np.count_nonzero(self.counts))

    @property
    def coverage(self) -> float:
        return self.covered / self.counts.size

    def means(self) -> tuple[np.ndarray, np.ndarray]:
        """Cell means (0 where empty) and the filled mask, both shaped ``(G,)*4``."""
        shape = (self.points,) * 4
        filled = self.counts > 0
        vals = np.zeros_like(self.sums)
        vals[filled] = self.sums[filled] / self.counts[filled]
        return vals.reshape(shape), filled.reshape(shape)


def fill_empty(values: np.ndarray, filled: np.ndarray) -> np.ndarray:
    """Fill empty cells by frontier dilation.

    Each round, every empty cell with at least one filled axis-neighbour
    takes the mean of those neighbours; all cells of a round update
    together so the result does not depend on visiting order.
    """
    vals = np.where(filled, values, 0.0).astype(np.float64)
    filled = filled.copy()
    if not filled.any():
        raise EmptyDatasetError("no grid cell received a sample")
    while not filled.all():
        total = np.zeros_like(vals)
        count = np.zeros(vals.shape, dtype=np.int64)
        for ax in range(vals.ndim):
            for shift in (1, -1):
                src = [slice(None)] * vals.ndim
                dst = [slice(None)] * vals.ndim
                if shift == 1:
                    src[ax], dst[ax] = slice(None, -1), slice(1, None)
                else:
                    src[ax], dst[ax] = slice(1, None), slice(None, -1)
                src, dst = tuple(src), tuple(dst)
                total[dst] += np.where(filled[src], vals[src], 0.0)
                count[dst] += filled[src]
        frontier = ~filled & (count > 0)
        vals[frontier] = total[frontier] / count[frontier]
        filled |= frontier
    return vals


@dataclass
class QuantResult:
    grid: LutGrid4D
    coverage: float
    covered_cells: int
    total_cells: int
    teacher_range: tuple[float, float] = field(default=(0.0, 0.0))


def build_quantized_lut(
    dataset: Sequence[ImagePair],
    teacher: TeacherKind | str,
    scene_feature: SceneFeature | None = None,
    points: int = DEFAULT_G,
    bin_scale: float = DEFAULT_T,
) -> QuantResult:
    """Bin teacher outputs by nearest grid node, average, and fill gaps."""
    if len(dataset) == 0:
        raise EmptyDatasetError("quantization needs at least one image pair")
    scene_feature = scene_feature or SceneFeature()
    acc = QuantAccumulator(points, bin_scale)
    lo, hi = np.inf, -np.inf
    for pair in dataset:
        n_i, n_v = intensity_encodings(pair)
        g_v = gradient_encoding(n_v)
        s_j = scene_feature(n_v, n_i)
        target = np.asarray(teacher_fuse(teacher, pair), np.float64)
        lo, hi = min(lo, float(target.min())), max(hi, float(target.max()))
        acc.add((n_v, n_i, g_v, s_j), target)
    vals, filled = acc.means()
    entries = fill_empty(vals, filled).astype(np.float32)
    return QuantResult(
        LutGrid4D(entries, bin_scale),
        coverage=acc.coverage,
        covered_cells=acc.covered,
        total_cells=acc.counts.size,
        teacher_range=(lo, hi),
    )


def quantized_model(
    result: QuantResult, teacher: TeacherKind | str, scene_feature: SceneFeature | None = None
) -> MmLutModel:
    """Wrap a quantized grid as an ``MmLutModel`` with provenance metadata."""
    scene_feature = scene_feature or SceneFeature()
    kind = teacher if isinstance(teacher, TeacherKind) else TeacherKind(teacher)
    meta = {
        "method": "quantized",
        "teacher": kind.short,
        "scene_source": scene_feature.kind,
        "coverage": result.coverage,
    }
    if scene_feature.kind == SCENE_BOX:
        return MmLutModel(result.grid, None, scene_feature=SCENE_BOX, metadata=meta)
    return MmLutModel(
        result.grid,
        scene_feature.encoder.copy(),
        downsample=scene_feature.downsample,
        scene_feature=SCENE_ENCODER,
        metadata=meta,
    )
