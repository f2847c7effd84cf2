"""AdamW over a list of float32 parameter arrays with float64 moments."""

from __future__ import annotations

import numpy as np

from ..errors import NonFiniteError, ShapeMismatchError


class AdamW:
    """Bias-corrected Adam with decoupled weight decay.

    ``scales`` gives each parameter's unit: the update runs on ``p / scale``
    so that the learning rate means the same thing for tables stored on the
    [0, 255] scale as for encoder weights.  ``decay`` selects which
    parameters receive weight decay.
    """

    def __init__(self, shapes, lr=5e-5, betas=(0.9, 0.999), eps=1e-8, weight_decay=0.0,
                 scales=None, decay=None):
        self.lr = lr
        self.beta1, self.beta2 = betas
        self.eps = eps
        self.weight_decay = weight_decay
        self.scales = list(scales) if scales is not None else [1.0] * len(shapes)
        self.decay = list(decay) if decay is not None else [True] * len(shapes)
        self.step_count = 0
        self.m = [np.zeros(s) for s in shapes]
        self.v = [np.zeros(s) for s in shapes]

    def step(self, params: list[np.ndarray], grads: list[np.ndarray]) -> None:
        """Update ``params`` in place."""
        if len(params) != len(self.m) or len(grads) != len(self.m):
            raise ShapeMismatchError("parameter/gradient count does not match optimizer state")
        for k, g in enumerate(grads):
            if g.shape != self.m[k].shape or params[k].shape != self.m[k].shape:
                raise ShapeMismatchError(f"parameter {k}: shape {params[k].shape} vs state {self.m[k].shape}")
            if not np.all(np.isfinite(g)):
                bad = int(np.count_nonzero(~np.isfinite(g)))
                raise NonFiniteError(f"non-finite gradient for parameter {k} ({bad} values) at step {self.step_count + 1}")
        self.step_count += 1
        t = self.step_count
        bc1 = 1.0 - self.beta1**t
        bc2 = 1.0 - self.beta2**t
        for k, (p, g) in enumerate(zip(params, grads)):
            scale = self.scales[k]
            gu = np.asarray(g, np.float64) * scale
            m, v = self.m[k], self.v[k]
            m *= self.beta1
            m += (1.0 - self.beta1) * gu
            v *= self.beta2
            v += (1.0 - self.beta2) * gu * gu
            u = p.astype(np.float64) / scale
            if self.weight_decay and self.decay[k]:
                u *= 1.0 - self.lr * self.weight_decay
            u -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)
            p[...] = u * scale

    def moments(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.m, self.v))

    def load_moments(self, step: int, moments) -> None:
        if len(moments) != len(self.m):
            raise ShapeMismatchError("optimizer state has the wrong number of parameters")
        for k, (m, v) in enumerate(moments):
            if m.shape != self.m[k].shape:
                raise ShapeMismatchError(f"optimizer moment {k}: {m.shape} vs {self.m[k].shape}")
        self.m = [m.copy() for m, _ in moments]
        self.v = [v.copy() for _, v in moments]
        self.step_count = step
