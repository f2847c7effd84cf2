import numpy as np
import pytest

from lutfuse.errors import ConfigError
from lutfuse.teacher import PyramidTooDeepError, TeacherKind, fuse_planes, laplacian_pyramid, reconstruct, teacher_fuse

from conftest import make_pair


def test_aliases():
    assert TeacherKind("max").name == "max-luminance"
    assert TeacherKind("laplacian-pyramid").short == "lappyr"
    with pytest.raises(ConfigError):
        TeacherKind("mmnet")


def test_simple_teachers(rng):
    v, i = rng.uniform(0, 255, (2, 20, 24))
    np.testing.assert_allclose(fuse_planes(TeacherKind("avg"), v, i), (v + i) / 2, atol=1e-4)
    np.testing.assert_allclose(fuse_planes(TeacherKind("maxlum"), v, i), np.maximum(v, i), atol=1e-4)


def test_pyramid_reconstructs_exactly(rng):
    x = rng.uniform(0, 255, (37, 50))
    pyr = laplacian_pyramid(x, 4)
    assert len(pyr) == 5
    assert pyr[-1].shape == (3, 4)
    np.testing.assert_allclose(reconstruct(pyr), x, atol=1e-10)


def test_pyramid_identical_inputs_is_identity(rng):
    x = rng.uniform(0, 255, (32, 48)).astype(np.float32)
    out = fuse_planes(TeacherKind("lappyr"), x, x)
    np.testing.assert_allclose(out, x, atol=1e-3)


def test_pyramid_constant_inputs():
    out = teacher_fuse("lappyr", make_pair(np.full((16, 16), 40.0), np.full((16, 16), 120.0)))
    np.testing.assert_allclose(out, 80.0, atol=1e-3)


def test_pyramid_keeps_stronger_detail():
    # IR holds a sharp bright square; the visible plane is flat, so the square survives fusion
    ir = np.full((32, 32), 100.0)
    ir[12:20, 12:20] = 220.0
    out = fuse_planes(TeacherKind("lappyr"), np.full((32, 32), 100.0), ir)
    assert out[16, 16] > 180 and abs(out[2, 2] - 100) < 15
    assert out.min() >= 0 and out.max() <= 255


def test_pyramid_too_deep():
    with pytest.raises(PyramidTooDeepError):
        laplacian_pyramid(np.zeros((15, 64)), 4)
    with pytest.raises(PyramidTooDeepError):
        TeacherKind("lappyr", levels=0)
