"""Binary containers: ``.mmlut`` models and ``MMOS`` optimizer-state sidecars.

Both are little-endian and end with a CRC32 of every preceding byte.

``.mmlut`` layout::

    b"MMLT"  u32 version=1  u32 G  f32 T  4-byte axis tag b"VIGS"
    f32[G**4] grid entries, C order over (v, i, g, s)
    u32 block count, then per block:
        u32 out, u32 in, u32 kh, u32 kw, f32 weights[out*in*kh*kw], f32 bias[out]
    u8 downsample
    u32 n, n bytes of UTF-8 JSON metadata
    u32 crc32

A block count of zero means the model uses the fixed box-mean scene feature.
"""

from __future__ import annotations

import json
import os
import struct
import zlib

import numpy as np

from .encode import SceneEncoderParams
from .errors import (
    BadMagicError,
    ChecksumMismatchError,
    FileMissingError,
    TruncatedFileError,
    UnsupportedVersionError,
)
from .imgio import atomic_write_bytes
from .lutcore import SCENE_BOX, SCENE_ENCODER, LutGrid4D, MmLutModel

MODEL_MAGIC = b"MMLT"
OPTIM_MAGIC = b"MMOS"
VERSION = 1
AXIS_TAG = b"VIGS"
_SCENE_KEY = "scene_feature"


class _Reader:
    def __init__(self, data: bytes, what: str):
        self.data = data
        self.pos = 0
        self.what = what

    def take(self, n: int) -> bytes:
        # the trailing 4 bytes are the checksum, never payload
        if self.pos + n > len(self.data) - 4:
            raise TruncatedFileError(f"{self.what}: file truncated at byte {self.pos}")
        out = self.data[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        fmt = "<" + fmt
        vals = struct.unpack(fmt, self.take(struct.calcsize(fmt)))
        return vals if len(vals) > 1 else vals[0]

    def array(self, count: int, dtype: str) -> np.ndarray:
        dt = np.dtype(dtype).newbyteorder("<")
        return np.frombuffer(self.take(count * dt.itemsize), dtype=dt).astype(dt.newbyteorder("="))

    def finish(self) -> None:
        if len(self.data) - self.pos != 4:
            raise TruncatedFileError(f"{self.what}: {len(self.data) - self.pos - 4} unexpected trailing bytes")
        (crc,) = struct.unpack("<I", self.data[-4:])
        if crc != zlib.crc32(self.data[:-4]):
            raise ChecksumMismatchError(f"{self.what}: CRC32 mismatch")


def _check_header(data: bytes, magic: bytes, what: str) -> _Reader:
    if len(data) < 4 or data[:4] != magic:
        raise BadMagicError(f"{what}: bad magic {data[:4]!r}, expected {magic!r}")
    r = _Reader(data, what)
    r.pos = 4
    version = r.unpack("I")
    if version != VERSION:
        raise UnsupportedVersionError(f"{what}: unsupported format version {version}")
    return r


def _json_bytes(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":")).encode("utf-8")


def _seal(parts: list[bytes]) -> bytes:
    body = b"".join(parts)
    return body + struct.pack("<I", zlib.crc32(body))


def model_to_bytes(model: MmLutModel) -> bytes:
    grid = model.grid
    g = grid.points
    parts = [
        MODEL_MAGIC,
        struct.pack("<IIf", VERSION, g, grid.bin_scale),
        AXIS_TAG,
        np.ascontiguousarray(grid.entries, dtype="<f4").tobytes(),
    ]
    enc = model.encoder if model.scene_feature == SCENE_ENCODER else None
    blocks = list(zip(enc.weights, enc.biases)) if enc is not None else []
    parts.append(struct.pack("<I", len(blocks)))
    for w, b in blocks:
        parts.append(struct.pack("<IIII", *w.shape))
        parts.append(np.ascontiguousarray(w, dtype="<f4").tobytes())
        parts.append(np.ascontiguousarray(b, dtype="<f4").tobytes())
    meta = dict(model.metadata)
    meta[_SCENE_KEY] = model.scene_feature
    mb = _json_bytes(meta)
    parts += [struct.pack("<B", model.downsample), struct.pack("<I", len(mb)), mb]
    return _seal(parts)


def model_from_bytes(data: bytes, what: str = "model") -> MmLutModel:
    r = _check_header(data, MODEL_MAGIC, what)
    g, t = r.unpack("If")
    tag = r.take(4)
    if tag != AXIS_TAG:
        raise BadMagicError(f"{what}: unknown axis order tag {tag!r}")
    entries = r.array(g**4, "f4").reshape((g,) * 4)
    nblocks = r.unpack("I")
    ws, bs = [], []
    for _ in range(nblocks):
        shape = r.unpack("IIII")
        ws.append(r.array(int(np.prod(shape)), "f4").reshape(shape))
        bs.append(r.array(shape[0], "f4"))
    downsample = r.unpack("B")
    meta = json.loads(r.take(r.unpack("I")).decode("utf-8"))
    r.finish()
    scene = meta.pop(_SCENE_KEY, SCENE_ENCODER if nblocks else SCENE_BOX)
    return MmLutModel(
        LutGrid4D(entries, float(t)),
        SceneEncoderParams(ws, bs) if nblocks else None,
        downsample=downsample,
        scene_feature=scene,
        metadata=meta,
    )


def _read(path) -> bytes:
    try:
        with open(path, "rb") as fh:
            return fh.read()
    except FileNotFoundError:
        raise FileMissingError(f"file not found: {path}") from None


def save_model(model: MmLutModel, path: str | os.PathLike) -> None:
    atomic_write_bytes(path, model_to_bytes(model))


def load_model(path: str | os.PathLike) -> MmLutModel:
    return model_from_bytes(_read(path), str(path))


# -- optimizer state sidecar ------------------------------------------------


def optim_to_bytes(step: int, moments: list[tuple[np.ndarray, np.ndarray]], meta: dict) -> bytes:
    """Serialize Adam moments (float64) plus JSON metadata."""
    parts = [OPTIM_MAGIC, struct.pack("<IQI", VERSION, step, len(moments))]
    for m, v in moments:
        parts.append(struct.pack("<I", m.ndim) + struct.pack(f"<{m.ndim}I", *m.shape))
        parts.append(np.ascontiguousarray(m, dtype="<f8").tobytes())
        parts.append(np.ascontiguousarray(v, dtype="<f8").tobytes())
    mb = _json_bytes(meta)
    parts += [struct.pack("<I", len(mb)), mb]
    return _seal(parts)


def optim_from_bytes(data: bytes, what: str = "optimizer state"):
    r = _check_header(data, OPTIM_MAGIC, what)
    step, count = r.unpack("QI")
    moments = []
    for _ in range(count):
        ndim = r.unpack("I")
        shape = tuple(struct.unpack(f"<{ndim}I", r.take(4 * ndim)))
        n = int(np.prod(shape))
        moments.append((r.array(n, "f8").reshape(shape), r.array(n, "f8").reshape(shape)))
    meta = json.loads(r.take(r.unpack("I")).decode("utf-8"))
    r.finish()
    return step, moments, meta
