import numpy as np
import pytest

from lutfuse.encode import SceneEncoderParams
from lutfuse.errors import EmptyDatasetError
from lutfuse.imgio import ImagePair
from lutfuse.lutcore import fuse_luminance
from lutfuse.modelio import model_from_bytes, model_to_bytes
from lutfuse.quantbuild import (
    FROZEN_ENCODER,
    QuantAccumulator,
    SceneFeature,
    build_quantized_lut,
    fill_empty,
    quantized_model,
)

from conftest import make_pair


def test_constant_teacher_fills_whole_grid(tiny_dataset):
    pair = make_pair(np.full((24, 24), 128.0), np.full((24, 24), 128.0))
    res = build_quantized_lut([pair], "avg")
    assert np.all(res.grid.entries == 128.0)
    assert res.covered_cells == 1


def test_max_teacher_on_grid_points():
    # flat patches at v = 17k, i = 17l: gradient 0, box mean exact, teacher max(17k, 17l)
    t, levels = 17.0, range(0, 16)
    pairs = []
    for k in levels:
        for l in levels:
            v, i = t * k, t * l
            pairs.append(make_pair(np.full((12, 12), i), np.full((12, 12), v)))
    acc = build_quantized_lut(pairs, "maxlum")
    e = acc.grid.entries
    for k in levels:
        for l in levels:
            s = int(round((t * k + t * l) / 2 / t))
            assert e[k, l, 0, s] == pytest.approx(max(t * k, t * l), abs=1e-3)


def test_ten_percent_coverage_then_full_fill(rng):
    acc = QuantAccumulator(points=5, bin_scale=1.0)
    cells = rng.choice(5**4, size=round(0.1 * 5**4), replace=False)
    coords = np.stack(np.unravel_index(cells, (5,) * 4)).astype(np.float64)
    acc.add(tuple(coords + rng.uniform(-0.4, 0.4, coords.shape)), rng.uniform(0, 255, cells.size))
    assert abs(acc.coverage - 0.10) <= 1 / 5**4
    vals, filled = acc.means()
    out = fill_empty(vals, filled)
    assert np.all(np.isfinite(out))
    assert np.array_equal(out[filled], vals[filled])
    assert out.min() >= vals[filled].min() and out.max() <= vals[filled].max()


def test_fill_is_neighbour_mean():
    vals = np.zeros((3,) * 4)
    filled = np.zeros((3,) * 4, bool)
    vals[0, 0, 0, 0], vals[0, 0, 0, 2] = 10.0, 30.0
    filled[0, 0, 0, 0] = filled[0, 0, 0, 2] = True
    out = fill_empty(vals, filled)
    assert out[0, 0, 0, 1] == 20.0
    with pytest.raises(EmptyDatasetError):
        fill_empty(vals, np.zeros_like(filled))


def test_nearest_index_binning():
    acc = QuantAccumulator(points=3, bin_scale=10.0)
    idx = acc.cell_index([np.array([4.9, 5.1, 14.9, 99.0])] + [np.zeros(4)] * 3)
    assert list(idx // 27) == [0, 1, 1, 2]


def test_entries_within_teacher_range_and_deterministic(tiny_dataset):
    a = build_quantized_lut(tiny_dataset, "lappyr")
    b = build_quantized_lut(tiny_dataset, "lappyr")
    assert a.grid == b.grid
    lo, hi = a.teacher_range
    assert a.grid.entries.min() >= lo - 1e-3 and a.grid.entries.max() <= hi + 1e-3
    assert 0 < a.coverage <= 1


def test_quantized_model_metadata_and_format(tiny_dataset):
    res = build_quantized_lut(tiny_dataset, "avg")
    m = quantized_model(res, "avg")
    back = model_from_bytes(model_to_bytes(m))
    assert back.metadata["method"] == "quantized"
    assert back.scene_feature == "box-mean"
    assert fuse_luminance(back, tiny_dataset[0]).shape == tiny_dataset[0].shape


def test_frozen_encoder_feature(tiny_dataset):
    feat = SceneFeature(FROZEN_ENCODER, SceneEncoderParams.init(0))
    res = build_quantized_lut(tiny_dataset[:2], "avg", feat)
    m = quantized_model(res, "avg", feat)
    assert m.scene_feature == "encoder" and m.metadata["scene_source"] == FROZEN_ENCODER
    with pytest.raises(ValueError):
        SceneFeature(FROZEN_ENCODER)


def test_empty_dataset():
    with pytest.raises(EmptyDatasetError):
        build_quantized_lut([], "avg")
