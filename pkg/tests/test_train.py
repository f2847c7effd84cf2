import numpy as np
import pytest

from lutfuse.errors import ConfigError, EmptyDatasetError
from lutfuse.lutcore import LutGrid4D, MmLutModel
from lutfuse.modelio import model_to_bytes
from lutfuse.encode import SceneEncoderParams
from lutfuse.train import LossWeights, TrainConfig, history_csv, load_checkpoint, total_loss, train_loop
from lutfuse.train.loop import Batch, SourceCache, sidecar_path
from lutfuse.teacher import TeacherKind


def _batch(rng, n=2, p=16, frozen=False):
    v, i = rng.uniform(0, 255, (2, n, p, p))
    g = rng.uniform(0, 120, (n, p, p))
    teacher = np.clip((v + i) / 2 + rng.normal(0, 20, v.shape), 0, 255)
    scene = rng.uniform(0, 255, (n, p, p)) if frozen else None
    return Batch(v, i, g, teacher, scene)


def _model(rng, frozen=False):
    grid = LutGrid4D(rng.uniform(0, 255, (5,) * 4), 64.0)
    if frozen:
        return MmLutModel(grid, None, scene_feature="box-mean")
    return MmLutModel(grid, SceneEncoderParams.init(4, dtype=np.float64), downsample=2)


def test_total_loss_grid_gradient_fd(rng):
    model = _model(rng, frozen=True)
    batch = _batch(rng, frozen=True)
    w = LossWeights()
    _, gg, enc = total_loss(model, batch, w)
    assert enc is None
    e = model.grid.entries
    h = 1e-4
    for idx in [(1, 1, 0, 2), (2, 3, 1, 1), (0, 2, 0, 3), (3, 1, 1, 0)]:
        orig = e[idx]
        e[idx] = orig + h
        up = total_loss(model, batch, w, need_grad=False)[0]["L_all"]
        e[idx] = orig - h
        dn = total_loss(model, batch, w, need_grad=False)[0]["L_all"]
        e[idx] = orig
        fd = (up - dn) / (2 * h)
        assert abs(gg[idx] - fd) <= 1e-3 * max(abs(fd), 1e-8)


def test_total_loss_encoder_gradient_fd(rng):
    model = _model(rng)
    batch = _batch(rng, n=1, p=20)
    w = LossWeights()
    _, _, enc = total_loss(model, batch, w)
    h = 1e-5
    for k, idx in [(0, (2, 1, 1, 1)), (3, (4, 5, 0, 2)), (4, (0, 3, 1, 1))]:
        wt = model.encoder.weights[k]
        orig = wt[idx]
        wt[idx] = orig + h
        up = total_loss(model, batch, w, need_grad=False)[0]["L_all"]
        wt[idx] = orig - h
        dn = total_loss(model, batch, w, need_grad=False)[0]["L_all"]
        wt[idx] = orig
        fd = (up - dn) / (2 * h)
        assert abs(enc.weights[k][idx] - fd) <= 1e-3 * max(abs(fd), 1e-7)


def test_loss_terms_combine(rng):
    model = _model(rng, frozen=True)
    terms, _, _ = total_loss(model, _batch(rng, frozen=True), LossWeights(0.1, 1e-4, 10))
    want = terms["L_int"] + 0.1 * terms["L_ssim"] + 1e-4 * terms["R_TV"] + 10 * terms["R_m"]
    assert terms["L_all"] == pytest.approx(want, rel=1e-12)


def test_config_defaults_and_validation():
    c = TrainConfig()
    assert (c.lr, c.batch, c.patch, c.bin_scale, c.points, c.epochs) == (5e-5, 8, 96, 17.0, 17, 500)
    assert (c.weights.ssim, c.weights.tv, c.weights.mono) == (0.1, 1e-4, 10.0)
    for bad in [dict(epochs=0), dict(batch=0), dict(patch=8), dict(downsample=3), dict(lr=0), dict(teacher="x")]:
        with pytest.raises(ConfigError):
            TrainConfig(**bad).validate()
    with pytest.raises(ConfigError):
        LossWeights(ssim=-1)
    assert TrainConfig.from_dict(c.to_dict()) == c


def test_short_run_deterministic_and_learns(tiny_dataset):
    cfg = TrainConfig(epochs=3, batch=4, patch=32, teacher="maxlum", crops_per_image=4, seed=7)
    a = train_loop(cfg, tiny_dataset)
    b = train_loop(cfg, tiny_dataset)
    assert model_to_bytes(a.model) == model_to_bytes(b.model)
    assert len(a.history) == 3 and a.history[-1][5] < a.history[0][5]
    assert a.optimizer.step_count == 3 * cfg.steps_per_epoch(len(tiny_dataset))


def test_resume_matches_uninterrupted(tiny_dataset, tmp_path):
    cfg = TrainConfig(epochs=3, batch=2, patch=32, teacher="avg", crops_per_image=1, seed=3)
    full = train_loop(cfg, tiny_dataset)
    path = tmp_path / "ck.mmlut"
    train_loop(cfg, tiny_dataset, out=path, stop_after=2)
    assert sidecar_path(path).exists()
    resumed = train_loop(cfg, tiny_dataset, resume=load_checkpoint(path))
    assert model_to_bytes(resumed.model) == model_to_bytes(full.model)
    assert resumed.history == full.history


def test_frozen_scene_feature_training(tiny_dataset):
    cfg = TrainConfig(epochs=1, batch=2, patch=32, frozen_scene_feature=True)
    ck = train_loop(cfg, tiny_dataset)
    assert ck.model.encoder is None and ck.model.scene_feature == "box-mean"


def test_history_csv():
    text = history_csv([(1, 0.5, 0.25, 0.0, 0.0, 0.6, 3)])
    lines = text.strip().split("\n")
    assert lines[0] == "epoch,L_int,L_ssim,R_TV,R_m,L_all,violations"
    assert lines[1].startswith("1,0.5,0.25,")


def test_empty_dataset():
    with pytest.raises(EmptyDatasetError):
        SourceCache([], TeacherKind("avg"), False)
