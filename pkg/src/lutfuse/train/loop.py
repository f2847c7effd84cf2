"""Distillation of a teacher into a lookup table plus scene encoder."""

from __future__ import annotations

import csv
import io
import json
import logging
import math
from contextlib import nullcontext
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
from threadpoolctl import threadpool_limits

from ..encode import (
    SceneEncoderParams,
    box_scene_feature,
    gradient_encoding,
    intensity_encodings,
    scene_encode,
    scene_encode_backward,
)
from ..errors import ConfigError, EmptyDatasetError
from ..imgio import ImagePair, atomic_write_bytes, sample_offsets
from ..lutcore import (
    SCENE_BOX,
    SCENE_ENCODER,
    LutGrid4D,
    MmLutModel,
    fuse_luminance,
    lookup_backward_values,
    lookup_values,
)
from ..modelio import load_model, model_to_bytes, optim_from_bytes, optim_to_bytes
from ..teacher import TeacherKind, fuse_planes
from .losses import grid_regularizers, intensity_loss, monotonicity_regularizer, ssim_loss
from .optim import AdamW

log = logging.getLogger(__name__)

HISTORY_FIELDS = ("epoch", "L_int", "L_ssim", "R_TV", "R_m", "L_all", "violations")

# A pair counts as a monotonicity violation when the entry drops by more
# than this many levels. The hinge keeps tied pairs jittering around zero
# at the scale of one optimizer step.
VIOLATION_TOL = 0.05


@dataclass
class LossWeights:
    ssim: float = 0.1
    tv: float = 1e-4
    mono: float = 10.0

    def __post_init__(self):
        for k, v in asdict(self).items():
            if not v >= 0:
                raise ConfigError(f"loss weight {k} must be >= 0, got {v}")


@dataclass
class TrainConfig:
    epochs: int = 500
    batch: int = 8
    patch: int = 96
    seed: int = 0
    teacher: str = "lappyr"
    pyramid_levels: int = 4
    weights: LossWeights = field(default_factory=LossWeights)
    lr: float = 5e-5
    weight_decay: float = 0.0
    downsample: int = 4
    points: int = 17
    bin_scale: float = 17.0
    frozen_scene_feature: bool = False
    crops_per_image: int = 1
    checkpoint_every: int = 0
    deterministic: bool = True

    def validate(self) -> None:
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.batch < 1:
            raise ConfigError("batch must be >= 1")
        if self.patch < 17:
            raise ConfigError("patch must be >= 17 so the SSIM window fits")
        if self.crops_per_image < 1:
            raise ConfigError("crops_per_image must be >= 1")
        if self.downsample not in (1, 2, 4):
            raise ConfigError("downsample must be 1, 2 or 4")
        if not self.lr > 0 or self.weight_decay < 0:
            raise ConfigError("lr must be > 0 and weight_decay >= 0")
        if not self.bin_scale > 0 or self.points < 2:
            raise ConfigError("bin_scale must be > 0 and points >= 2")
        if self.checkpoint_every < 0:
            raise ConfigError("checkpoint_every must be >= 0")
        TeacherKind(self.teacher, self.pyramid_levels)

    def steps_per_epoch(self, n_images: int) -> int:
        return math.ceil(n_images * self.crops_per_image / self.batch)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "TrainConfig":
        d = dict(d)
        d["weights"] = LossWeights(**d.get("weights", {}))
        return cls(**d)


# -- objective --------------------------------------------------------------


@dataclass
class Batch:
    """Aligned crops, each of shape (n, p, p)."""

    n_v: np.ndarray
    n_i: np.ndarray
    g_v: np.ndarray
    teacher: np.ndarray
    scene: np.ndarray | None = None  # fixed scene feature, when frozen


class SourceCache:
    """Full-image encodings and teacher outputs, cropped on demand."""

    def __init__(self, dataset: Sequence[ImagePair], teacher: TeacherKind, frozen_scene: bool):
        if not dataset:
            raise EmptyDatasetError("training dataset is empty")
        self.planes = []
        for pair in dataset:
            n_i, n_v = intensity_encodings(pair)
            entry = {
                "n_v": n_v,
                "n_i": n_i,
                "g_v": gradient_encoding(n_v),
                "teacher": fuse_planes(teacher, n_v, n_i),
            }
            if frozen_scene:
                entry["scene"] = box_scene_feature(n_v, n_i)
            self.planes.append(entry)
        self.shapes = [p["n_v"].shape for p in self.planes]

    def crop(self, idx, offsets, size: int) -> Batch:
        out = {}
        for key in self.planes[0]:
            out[key] = np.stack(
                [self.planes[i][key][y : y + size, x : x + size] for i, (y, x) in zip(idx, offsets)]
            ).astype(np.float64)
        return Batch(**out)


def total_loss(model: MmLutModel, batch: Batch, weights: LossWeights, need_grad: bool = True):
    """All loss terms and gradients for one batch.

    Every term is evaluated on the [0, 1] intensity scale (images and table
    entries divided by 255) so the loss weights keep their usual meaning.
    Returns ``(terms, grid_grad, encoder_grads)`` where ``terms`` maps
    ``L_int, L_ssim, R_TV, R_m, L_all`` to floats and ``grid_grad`` is
    d(L_all)/d(entries) for entries on the [0, 255] scale.
    """
    grid = model.grid
    tape = None
    if model.scene_feature == SCENE_ENCODER:
        # the encoder runs in its parameters' dtype (float32 in training, float64 for gradient checks)
        dtype = model.encoder.weights[0].dtype.type
        s, tape = scene_encode((batch.n_v, batch.n_i), model.encoder, model.downsample, dtype=dtype)
    else:
        s = batch.scene
    y = lookup_values(grid, batch.n_v, batch.n_i, batch.g_v, s)

    l_int, g_int = intensity_loss(batch.teacher / 255.0, y / 255.0)
    l_ssim, g_ssim = ssim_loss(batch.teacher, y)
    e = grid.entries
    r_tv, g_tv, r_m, g_m, _ = grid_regularizers(e / 255.0)
    l_all = l_int + weights.ssim * l_ssim + weights.tv * r_tv + weights.mono * r_m
    terms = {"L_int": l_int, "L_ssim": l_ssim, "R_TV": r_tv, "R_m": r_m, "L_all": l_all}
    if not need_grad:
        return terms, None, None

    upstream = g_int / 255.0 + weights.ssim * g_ssim
    grid_grad, ds = lookup_backward_values(grid, batch.n_v, batch.n_i, batch.g_v, s, upstream)
    grid_grad += (weights.tv * g_tv + weights.mono * g_m) / 255.0
    enc_grads = None
    if tape is not None:
        enc_grads = scene_encode_backward(tape, tape.resampler.up_adjoint(ds))
    return terms, grid_grad, enc_grads


# -- checkpoints ------------------------------------------------------------


@dataclass
class Checkpoint:
    model: MmLutModel
    optimizer: AdamW
    epoch: int
    rng_state: dict
    history: list[tuple] = field(default_factory=list)
    config: TrainConfig | None = None


def sidecar_path(path: str | Path) -> Path:
    return Path(path).with_suffix(".mmos")


def save_checkpoint(ckpt: Checkpoint, path: str | Path) -> None:
    """Write ``path`` (the model container) and its ``.mmos`` optimizer sidecar."""
    meta = {
        "epoch": ckpt.epoch,
        "rng_state": ckpt.rng_state,
        "history": [list(r) for r in ckpt.history],
        "config": ckpt.config.to_dict() if ckpt.config else None,
    }
    atomic_write_bytes(sidecar_path(path), optim_to_bytes(ckpt.optimizer.step_count, ckpt.optimizer.moments(), meta))
    atomic_write_bytes(path, model_to_bytes(ckpt.model))


def load_checkpoint(path: str | Path) -> Checkpoint:
    model = load_model(path)
    with open(sidecar_path(path), "rb") as fh:
        step, moments, meta = optim_from_bytes(fh.read(), str(sidecar_path(path)))
    config = TrainConfig.from_dict(meta["config"]) if meta.get("config") else TrainConfig()
    opt = _make_optimizer(model, config)
    opt.load_moments(step, moments)
    history = [tuple(r) for r in meta["history"]]
    return Checkpoint(model, opt, meta["epoch"], meta["rng_state"], history, config)


def history_csv(history: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(HISTORY_FIELDS)
    for row in history:
        w.writerow([row[0], *(repr(float(v)) for v in row[1:6]), row[6]])
    return buf.getvalue()


# -- loop -------------------------------------------------------------------


def _params(model: MmLutModel) -> list[np.ndarray]:
    enc = model.encoder.arrays() if model.scene_feature == SCENE_ENCODER else []
    return [model.grid.entries] + enc


def _make_optimizer(model: MmLutModel, cfg: TrainConfig) -> AdamW:
    params = _params(model)
    return AdamW(
        [p.shape for p in params],
        lr=cfg.lr,
        weight_decay=cfg.weight_decay,
        scales=[255.0] + [1.0] * (len(params) - 1),
        decay=[False] + [True] * (len(params) - 1),
    )


def init_model(cfg: TrainConfig) -> MmLutModel:
    grid = LutGrid4D.average(cfg.points, cfg.bin_scale)
    meta = {
        "method": "distilled",
        "teacher": TeacherKind(cfg.teacher, cfg.pyramid_levels).short,
        "seed": cfg.seed,
        "lambda_ssim": cfg.weights.ssim,
        "lambda_tv": cfg.weights.tv,
        "lambda_m": cfg.weights.mono,
        "encoder_init": "uniform(+-sqrt(1/fan_in))",
    }
    if cfg.frozen_scene_feature:
        return MmLutModel(grid, None, cfg.downsample, SCENE_BOX, meta)
    return MmLutModel(grid, SceneEncoderParams.init(cfg.seed), cfg.downsample, SCENE_ENCODER, meta)


def new_checkpoint(cfg: TrainConfig) -> Checkpoint:
    model = init_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    return Checkpoint(model, _make_optimizer(model, cfg), 0, rng.bit_generator.state, [], cfg)


def train_loop(
    config: TrainConfig,
    dataset: Sequence[ImagePair],
    out: str | Path | None = None,
    resume: Checkpoint | None = None,
    stop_after: int | None = None,
) -> Checkpoint:
    """Train for ``config.epochs`` epochs (or until ``stop_after``), return the final checkpoint.

    Each epoch draws ``steps_per_epoch`` batches of random crops. With
    ``out`` set, checkpoints are written there every ``checkpoint_every``
    epochs and at the end.
    """
    config.validate()
    teacher = TeacherKind(config.teacher, config.pyramid_levels)
    sources = SourceCache(dataset, teacher, config.frozen_scene_feature)
    ckpt = resume if resume is not None else new_checkpoint(config)
    ckpt.config = config
    model, opt = ckpt.model, ckpt.optimizer
    rng = np.random.default_rng()
    rng.bit_generator.state = ckpt.rng_state
    steps = config.steps_per_epoch(len(dataset))
    last = config.epochs if stop_after is None else min(config.epochs, stop_after)
    params = _params(model)

    limit = threadpool_limits(limits=1) if config.deterministic else nullcontext()
    with limit:
        for epoch in range(ckpt.epoch, last):
            sums = dict.fromkeys(HISTORY_FIELDS[1:6], 0.0)
            for _ in range(steps):
                idx, offsets = sample_offsets(sources.shapes, config.batch, config.patch, rng)
                batch = sources.crop(idx, offsets, config.patch)
                terms, grid_grad, enc_grads = total_loss(model, batch, config.weights)
                grads = [grid_grad] + (enc_grads.arrays() if enc_grads is not None else [])
                opt.step(params, grads)
                for k in sums:
                    sums[k] += terms[k]
            _, _, viol = monotonicity_regularizer(model.grid.entries, VIOLATION_TOL)
            row = (epoch + 1, *(sums[k] / steps for k in HISTORY_FIELDS[1:6]), viol)
            ckpt.history.append(row)
            ckpt.epoch = epoch + 1
            ckpt.rng_state = rng.bit_generator.state
            log.info("epoch %d  L_all %.5f  L_int %.5f  violations %d", row[0], row[5], row[1], viol)
            if out and config.checkpoint_every and ckpt.epoch % config.checkpoint_every == 0:
                save_checkpoint(ckpt, out)
    if out:
        save_checkpoint(ckpt, out)
    return ckpt


def held_out_l1(model: MmLutModel, pairs: Sequence[ImagePair], teacher: str | TeacherKind) -> float:
    """Mean |student - teacher| in levels over every pixel of ``pairs``."""
    kind = teacher if isinstance(teacher, TeacherKind) else TeacherKind(teacher)
    total, count = 0.0, 0
    for pair in pairs:
        n_i, n_v = intensity_encodings(pair)
        t = fuse_planes(kind, n_v, n_i).astype(np.float64)
        y = fuse_luminance(model, pair).astype(np.float64)
        total += float(np.abs(y - t).sum())
        count += t.size
    return total / count


def config_json(cfg: TrainConfig) -> str:
    return json.dumps(cfg.to_dict(), sort_keys=True)
