"""Image loading/saving, BT.601 colour conversion and seeded patch sampling.

Planes are ``float32`` arrays of shape ``(H, W)`` and colour images are
``float32`` arrays of shape ``(H, W, 3)``, both on the [0, 255] scale.
"""

from __future__ import annotations

import logging
import os
import tempfile
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from PIL import Image, UnidentifiedImageError

from .errors import (
    DecodeError,
    DimensionMismatchError,
    EmptyDatasetError,
    FileMissingError,
    ImageTooSmallError,
    UnsupportedBitDepthError,
)

log = logging.getLogger(__name__)

IMAGE_SUFFIXES = (".png", ".pgm", ".ppm", ".pnm")

# BT.601 full-range luma weights
KR, KG, KB = 0.299, 0.587, 0.114


@dataclass(frozen=True)
class ImagePair:
    """A registered infrared plane and visible colour image of equal size."""

    ir: np.ndarray
    vis: np.ndarray
    name: str = ""

    def __post_init__(self):
        if self.ir.ndim != 2 or self.vis.ndim != 3 or self.vis.shape[2] != 3:
            raise DimensionMismatchError(
                f"expected ir (H, W) and vis (H, W, 3), got {self.ir.shape} and {self.vis.shape}"
            )
        if self.ir.shape != self.vis.shape[:2]:
            raise DimensionMismatchError(
                f"ir is {self.ir.shape[1]}x{self.ir.shape[0]} but vis is "
                f"{self.vis.shape[1]}x{self.vis.shape[0]}"
            )

    @property
    def shape(self) -> tuple[int, int]:
        return self.ir.shape

    def crop(self, y: int, x: int, size: int) -> "ImagePair":
        return ImagePair(
            self.ir[y : y + size, x : x + size],
            self.vis[y : y + size, x : x + size],
            self.name,
        )


@dataclass
class PatchBatch:
    patches: list[ImagePair]
    patch_size: int
    source_indices: np.ndarray
    offsets: np.ndarray  # (count, 2) rows of (y, x)

    def __len__(self) -> int:
        return len(self.patches)


def _decode(path: Path) -> np.ndarray:
    if not path.is_file():
        raise FileMissingError(f"file not found: {path}")
    try:
        with Image.open(path) as im:
            im.load()
            mode = im.mode
            if mode in ("I;16", "I;16B", "I;16L", "I", "F") or mode.startswith("I;16"):
                raise UnsupportedBitDepthError(f"{path}: only 8-bit images are supported (mode {mode})")
            if mode in ("L", "RGB"):
                arr = np.asarray(im)
            elif mode in ("LA", "P", "RGBA", "1", "CMYK", "YCbCr"):
                arr = np.asarray(im.convert("L" if mode in ("LA", "1") else "RGB"))
            else:
                raise DecodeError(f"{path}: unsupported image mode {mode}")
    except (UnidentifiedImageError, OSError) as exc:
        raise DecodeError(f"cannot decode {path}: {exc}") from exc
    return arr.astype(np.float32)


def load_plane(path: str | os.PathLike) -> np.ndarray:
    """Load a 1- or 3-channel 8-bit image as a luminance plane."""
    arr = _decode(Path(path))
    if arr.ndim == 3:
        arr = luminance(arr)
    return arr


def load_color(path: str | os.PathLike) -> np.ndarray:
    arr = _decode(Path(path))
    if arr.ndim == 2:
        raise DecodeError(f"{path}: visible image must have 3 channels")
    return arr


def load_image_pair(ir_path: str | os.PathLike, vis_path: str | os.PathLike) -> ImagePair:
    ir = load_plane(ir_path)
    vis = load_color(vis_path)
    return ImagePair(ir, vis, Path(vis_path).stem)


def _atomic_write(path: Path, write) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            write(fh)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_bytes(path: str | os.PathLike, data: bytes) -> None:
    _atomic_write(Path(path), lambda fh: fh.write(data))


def save_png(path: str | os.PathLike, img: np.ndarray) -> None:
    """Write a plane or RGB image as an 8-bit PNG (rounded, clamped), atomically."""
    arr = np.clip(np.rint(img), 0, 255).astype(np.uint8)
    pil = Image.fromarray(arr, mode="L" if arr.ndim == 2 else "RGB")
    _atomic_write(Path(path), lambda fh: pil.save(fh, format="PNG"))


def luminance(rgb: np.ndarray) -> np.ndarray:
    rgb = np.asarray(rgb, dtype=np.float32)
    y = KR * rgb[..., 0] + KG * rgb[..., 1] + KB * rgb[..., 2]
    return np.clip(y, 0, 255).astype(np.float32)


def rgb_to_ycbcr(img: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """BT.601 full-range RGB -> (Y, Cb, Cr), each clamped to [0, 255]."""
    img = np.asarray(img, dtype=np.float64)
    r, g, b = img[..., 0], img[..., 1], img[..., 2]
    y = KR * r + KG * g + KB * b
    cb = 128.0 + (b - y) / (2 * (1 - KB))
    cr = 128.0 + (r - y) / (2 * (1 - KR))
    return tuple(np.clip(c, 0, 255).astype(np.float32) for c in (y, cb, cr))


def ycbcr_to_rgb(y: np.ndarray, cb: np.ndarray, cr: np.ndarray) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64)
    cb = np.asarray(cb, dtype=np.float64) - 128.0
    cr = np.asarray(cr, dtype=np.float64) - 128.0
    r = y + 2 * (1 - KR) * cr
    b = y + 2 * (1 - KB) * cb
    g = (y - KR * r - KB * b) / KG
    return np.clip(np.stack([r, g, b], axis=-1), 0, 255).astype(np.float32)


def list_pairs(data_dir: str | os.PathLike) -> list[tuple[Path, Path]]:
    """Match ``<data_dir>/ir/<name>`` with ``<data_dir>/vis/<name>`` by filename."""
    root = Path(data_dir)
    ir_dir, vis_dir = root / "ir", root / "vis"
    for d in (ir_dir, vis_dir):
        if not d.is_dir():
            raise FileMissingError(f"dataset directory missing: {d}")

    def scan(d):
        return {p.name: p for p in sorted(d.iterdir()) if p.suffix.lower() in IMAGE_SUFFIXES}

    irs, viss = scan(ir_dir), scan(vis_dir)
    for name in sorted(set(irs) ^ set(viss)):
        log.warning("skipping unmatched file %s", name)
    return [(irs[n], viss[n]) for n in sorted(set(irs) & set(viss))]


def load_dataset(data_dir: str | os.PathLike) -> list[ImagePair]:
    pairs = [load_image_pair(ir, vis) for ir, vis in list_pairs(data_dir)]
    if not pairs:
        raise EmptyDatasetError(f"no matched ir/vis pairs under {data_dir}")
    return pairs


def sample_offsets(
    shapes: Sequence[tuple[int, int]], count: int, size: int, rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """Draw ``count`` (source index, top-left offset) records uniformly."""
    if not shapes:
        raise EmptyDatasetError("cannot sample patches from an empty dataset")
    if count < 1:
        raise ValueError("count must be >= 1")
    for i, (h, w) in enumerate(shapes):
        if h < size or w < size:
            raise ImageTooSmallError(f"image {i} is {w}x{h}, smaller than patch size {size}")
    idx = rng.integers(0, len(shapes), size=count)
    offsets = np.empty((count, 2), dtype=np.int64)
    for j, i in enumerate(idx):
        h, w = shapes[i]
        offsets[j, 0] = rng.integers(0, h - size + 1)
        offsets[j, 1] = rng.integers(0, w - size + 1)
    return idx, offsets


def sample_patches(dataset: Sequence[ImagePair], count: int, size: int, seed) -> PatchBatch:
    """Random ``size`` x ``size`` crops; identical ``seed`` gives an identical batch.

    ``seed`` may be an int or an existing :class:`numpy.random.Generator`.
    """
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    idx, offsets = sample_offsets([p.shape for p in dataset], count, size, rng)
    patches = [dataset[i].crop(y, x, size) for i, (y, x) in zip(idx, offsets)]
    return PatchBatch(patches, size, idx, offsets)
