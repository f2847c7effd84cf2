"""Per-pixel lookup elements.

Three of the four table axes are fixed functions of the inputs (IR
intensity, visible luminance, Sobel gradient magnitude of the luminance).
The fourth is a scalar scene code produced by a small convolutional
encoder. The encoder has a hand-written backward pass so training needs no
autograd framework.

Encoder activations use NHWC layout.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.special import expit

from . import _kernels
from .errors import NonFiniteError, ShapeMismatchError
from .imgio import ImagePair, luminance

DEFAULT_WIDTHS = (2, 16, 16, 16, 16, 1)
LEAK = 0.2
KERNEL = 3


def intensity_encodings(pair: ImagePair) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(n_i, n_v)``: the IR plane unchanged and the visible luminance."""
    return pair.ir.astype(np.float32, copy=False), luminance(pair.vis)


def gradient_encoding(n_v: np.ndarray) -> np.ndarray:
    """Sobel gradient magnitude with replicated borders, clamped to [0, 255]."""
    x = np.asarray(n_v, dtype=np.float32)
    sx = ndimage.sobel(x, axis=-1, mode="nearest")
    sy = ndimage.sobel(x, axis=-2, mode="nearest")
    return np.minimum(np.hypot(sx, sy), 255.0).astype(np.float32)


@dataclass
class SceneEncoderParams:
    """Weights ``(out, in, 3, 3)`` and biases ``(out,)`` for each conv block."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]

    @classmethod
    def init(cls, seed: int, widths=DEFAULT_WIDTHS, dtype=np.float32) -> "SceneEncoderParams":
        rng = np.random.default_rng(seed)
        ws, bs = [], []
        for cin, cout in zip(widths[:-1], widths[1:]):
            bound = np.sqrt(1.0 / (cin * KERNEL * KERNEL))
            ws.append(rng.uniform(-bound, bound, (cout, cin, KERNEL, KERNEL)).astype(dtype))
            bs.append(rng.uniform(-bound, bound, cout).astype(dtype))
        return cls(ws, bs)

    @classmethod
    def zeros(cls, widths=DEFAULT_WIDTHS, dtype=np.float32) -> "SceneEncoderParams":
        return cls(
            [np.zeros((o, i, KERNEL, KERNEL), dtype) for i, o in zip(widths[:-1], widths[1:])],
            [np.zeros(o, dtype) for o in widths[1:]],
        )

    @property
    def num_blocks(self) -> int:
        return len(self.weights)

    def arrays(self) -> list[np.ndarray]:
        """Parameter arrays in a fixed order (w0, b0, w1, b1, ...), by reference."""
        out = []
        for w, b in zip(self.weights, self.biases):
            out += [w, b]
        return out

    def astype(self, dtype) -> "SceneEncoderParams":
        return SceneEncoderParams(
            [w.astype(dtype) for w in self.weights], [b.astype(dtype) for b in self.biases]
        )

    def copy(self) -> "SceneEncoderParams":
        return self.astype(self.weights[0].dtype) if self.weights else SceneEncoderParams([], [])

    def check(self) -> None:
        for k, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 4 or w.shape[2:] != (KERNEL, KERNEL) or b.shape != (w.shape[0],):
                raise ShapeMismatchError(f"block {k}: bad shapes {w.shape}, {b.shape}")
            if k and w.shape[1] != self.weights[k - 1].shape[0]:
                raise ShapeMismatchError(f"block {k}: expects {w.shape[1]} input channels")
            if not (np.isfinite(w).all() and np.isfinite(b).all()):
                raise NonFiniteError(f"non-finite parameter in encoder block {k}")

    def __eq__(self, other) -> bool:
        if not isinstance(other, SceneEncoderParams) or self.num_blocks != other.num_blocks:
            return False
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


# -- resampling operators ---------------------------------------------------


def area_matrix(n: int, factor: int) -> np.ndarray:
    """Block-mean downsampling operator of shape ``(ceil(n / factor), n)``."""
    m = -(-n // factor)
    a = np.zeros((m, n))
    for r in range(m):
        lo, hi = r * factor, min(n, (r + 1) * factor)
        a[r, lo:hi] = 1.0 / (hi - lo)
    return a


def bilinear_matrix(n_out: int, n_in: int) -> np.ndarray:
    """1-D linear interpolation operator ``(n_out, n_in)`` with half-pixel centres."""
    src = (np.arange(n_out) + 0.5) * (n_in / n_out) - 0.5
    src = np.clip(src, 0, n_in - 1)
    i0 = np.minimum(np.floor(src).astype(int), n_in - 1)
    i1 = np.minimum(i0 + 1, n_in - 1)
    f = src - i0
    u = np.zeros((n_out, n_in))
    rows = np.arange(n_out)
    np.add.at(u, (rows, i0), 1 - f)
    np.add.at(u, (rows, i1), f)
    return u


@dataclass
class Resampler:
    """Separable down/up operators between full and encoder resolution."""

    down_h: np.ndarray
    down_w: np.ndarray
    up_h: np.ndarray
    up_w: np.ndarray

    @classmethod
    def build(cls, h: int, w: int, factor: int) -> "Resampler":
        if factor not in (1, 2, 4):
            raise ValueError(f"downsample factor must be 1, 2 or 4, got {factor}")
        dh, dw = area_matrix(h, factor), area_matrix(w, factor)
        return cls(dh, dw, bilinear_matrix(h, dh.shape[0]), bilinear_matrix(w, dw.shape[0]))

    @property
    def identity(self) -> bool:
        return self.down_h.shape[0] == self.down_h.shape[1] and self.down_w.shape[0] == self.down_w.shape[1]

    def down(self, x: np.ndarray) -> np.ndarray:
        if self.identity:
            return x
        (m, h), (k, w) = self.down_h.shape, self.down_w.shape
        f = h // m
        if m * f == h and k * f == w:
            return x.reshape(x.shape[:-2] + (m, f, k, f)).mean(axis=(-3, -1))
        return self.down_h.astype(x.dtype) @ x @ self.down_w.T.astype(x.dtype)

    def up(self, x: np.ndarray) -> np.ndarray:
        if self.identity:
            return x
        return self.up_h.astype(x.dtype) @ x @ self.up_w.T.astype(x.dtype)

    def up_adjoint(self, g: np.ndarray) -> np.ndarray:
        if self.identity:
            return g
        return self.up_h.T.astype(g.dtype) @ g @ self.up_w.astype(g.dtype)


# -- convolution blocks -----------------------------------------------------


def _weight_matrix(w: np.ndarray, dtype) -> np.ndarray:
    """(out, in, 3, 3) -> (9 * in, out) with rows in (ky, kx, in) order."""
    o, c = w.shape[:2]
    return np.ascontiguousarray(w.transpose(2, 3, 1, 0).reshape(KERNEL * KERNEL * c, o), dtype=dtype)


def _im2col(x: np.ndarray) -> np.ndarray:
    n, h, w, c = x.shape
    cols = np.empty((n * h * w, KERNEL * KERNEL * c), dtype=x.dtype)
    _kernels.im2col3x3(np.ascontiguousarray(x), cols)
    return cols


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Zero-padded 3x3 convolution (cross-correlation) of NHWC ``x``."""
    return _conv(_im2col(x), x.shape, w, b)


def _conv(cols: np.ndarray, shape, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    z = cols @ _weight_matrix(w, cols.dtype)
    z += b.astype(cols.dtype)
    return z.reshape(tuple(shape[:3]) + (w.shape[0],))


@dataclass
class EncoderTape:
    """Forward-pass cache consumed by :func:`scene_encode_backward`."""

    inputs: list[np.ndarray] = field(default_factory=list)  # im2col matrices per block
    shapes: list[tuple] = field(default_factory=list)
    pre: list[np.ndarray] = field(default_factory=list)
    out: np.ndarray | None = None  # sigmoid output in (0, 1), shape (n, h, w)
    params: SceneEncoderParams | None = None
    resampler: Resampler | None = None
    consumed: bool = False


def encoder_forward(x: np.ndarray, params: SceneEncoderParams) -> tuple[np.ndarray, EncoderTape]:
    """Run the conv stack on ``x`` of shape ``(n, h, w, 2)`` with values in [0, 1].

    Returns the scene code in (0, 255), shape ``(n, h, w)``, and the tape.
    Computation happens in the dtype of ``x``.
    """
    params.check()
    tape = EncoderTape(params=params)
    a = x
    last = params.num_blocks - 1
    for k, (w, b) in enumerate(zip(params.weights, params.biases)):
        if a.shape[-1] != w.shape[1]:
            raise ShapeMismatchError(f"block {k} expects {w.shape[1]} channels, got {a.shape[-1]}")
        cols = _im2col(a)
        z = _conv(cols, a.shape, w, b)
        tape.inputs.append(cols)
        tape.shapes.append(a.shape)
        tape.pre.append(z)
        a = expit(z) if k == last else np.where(z > 0, z, LEAK * z)
    tape.out = a[..., 0]
    return tape.out * 255.0, tape


def encoder_backward(tape: EncoderTape, grad_s: np.ndarray) -> SceneEncoderParams:
    """Analytic parameter gradients given d(loss)/d(scene code) at encoder resolution."""
    if tape.consumed:
        raise ShapeMismatchError("encoder tape already consumed")
    if tape.out is None or grad_s.shape != tape.out.shape:
        raise ShapeMismatchError(
            f"gradient shape {grad_s.shape} does not match encoder output "
            f"{None if tape.out is None else tape.out.shape}"
        )
    tape.consumed = True
    params = tape.params
    sig = tape.out
    dtype = sig.dtype
    dz = (grad_s * 255.0 * sig * (1.0 - sig)).astype(dtype).reshape(-1, 1)
    gw: list[np.ndarray] = [None] * params.num_blocks
    gb: list[np.ndarray] = [None] * params.num_blocks
    for k in range(params.num_blocks - 1, -1, -1):
        w = params.weights[k]
        cols = tape.inputs[k]
        o, c = w.shape[:2]
        gw[k] = (cols.T @ dz).reshape(KERNEL, KERNEL, c, o).transpose(3, 2, 0, 1).copy()
        gb[k] = dz.sum(axis=0)
        if k > 0:
            dx = np.zeros(tape.shapes[k], dtype=dtype)
            _kernels.col2im3x3(np.ascontiguousarray(dz @ _weight_matrix(w, dtype).T), dx)
            zprev = tape.pre[k - 1]
            dz = (dx * np.where(zprev > 0, 1.0, LEAK).astype(dtype)).reshape(-1, c)
    return SceneEncoderParams(gw, gb)


def encoder_input(n_v: np.ndarray, n_i: np.ndarray, dtype=np.float32) -> np.ndarray:
    """Stack ``(n_v, n_i)`` as channels scaled to [0, 1]; accepts (h, w) or (n, h, w)."""
    x = np.stack([np.asarray(n_v, dtype), np.asarray(n_i, dtype)], axis=-1) / dtype(255.0)
    return x if x.ndim == 4 else x[None]


def scene_encode(
    pair_or_planes, params: SceneEncoderParams, downsample: int = 4, dtype=np.float32
) -> tuple[np.ndarray, EncoderTape]:
    """Scene code at full resolution, computed at ``1/downsample`` resolution.

    ``pair_or_planes`` is an :class:`ImagePair` or a tuple ``(n_v, n_i)`` of
    planes with shape (h, w) or batches (n, h, w).
    """
    if isinstance(pair_or_planes, ImagePair):
        n_i, n_v = intensity_encodings(pair_or_planes)
    else:
        n_v, n_i = pair_or_planes
    batched = np.ndim(n_v) == 3
    h, w = np.shape(n_v)[-2:]
    rs = Resampler.build(h, w, downsample)
    x = encoder_input(n_v, n_i, dtype)
    small = np.stack([rs.down(x[..., c]) for c in range(2)], axis=-1)
    s_small, tape = encoder_forward(small, params)
    tape.resampler = rs
    s = np.clip(rs.up(s_small), 0.0, 255.0)
    return (s if batched else s[0]), tape


def scene_encode_backward(tape: EncoderTape, grad_s: np.ndarray) -> SceneEncoderParams:
    """Parameter gradients from a gradient at encoder output resolution.

    Use ``tape.resampler.up_adjoint`` first to bring a full-resolution
    gradient down to encoder resolution.
    """
    if grad_s.ndim == 2:
        grad_s = grad_s[None]
    return encoder_backward(tape, grad_s)


BOX_SIZE = 11


def box_scene_feature(n_v: np.ndarray, n_i: np.ndarray, size: int = BOX_SIZE) -> np.ndarray:
    """Fixed scene code: ``size`` x ``size`` box mean of (n_v + n_i) / 2, edges replicated."""
    if size % 2 != 1:
        raise ValueError("box window must be odd-sized")
    avg = (np.asarray(n_v, np.float64) + np.asarray(n_i, np.float64)) / 2.0
    out = ndimage.uniform_filter(avg, size=size, mode="nearest")
    return np.clip(out, 0, 255).astype(np.float32)
