import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from lutfuse.errors import DimensionMismatchError, ShapeMismatchError
from lutfuse.metrics import (
    aggregate,
    correlation_coefficient,
    entropy,
    evaluate,
    mutual_information,
    mutual_information_pair,
    qabf,
    ssim_metric,
)

from test_losses import ssim_reference


def perfect_qabf():
    """Product of the two sigmoids at full strength and orientation preservation."""
    return 0.9994 / (1 + math.exp(-15 * (1 - 0.5))) * 0.9879 / (1 + math.exp(-22 * (1 - 0.8)))


def test_entropy_cases(rng):
    assert entropy(np.full((8, 8), 77.0)) == 0.0
    assert abs(entropy(rng.permutation(np.arange(256 * 4) % 256).reshape(32, 32)) - 8.0) < 1e-12
    assert abs(entropy(np.array([0.0, 255.0] * 50)) - 1.0) < 1e-12
    # values are rounded before binning
    assert entropy(np.array([10.2, 9.8, 10.4])) == 0.0


def test_mi_identities(rng):
    x = rng.integers(0, 256, (64, 64)).astype(np.float64)
    assert abs(mutual_information(x, x, x) - 2 * entropy(x)) < 1e-9
    a = rng.integers(0, 40, (50, 50)).astype(float)
    b = np.clip(a + rng.integers(-3, 4, a.shape), 0, 255)
    assert mutual_information_pair(a, b) == mutual_information_pair(b, a)
    with pytest.raises(DimensionMismatchError):
        mutual_information(x, x, x[:-1])


def test_mi_independent_planes_small(rng):
    # plug-in bias is about 255**2 / (2 N ln 2): 0.045 bits at 1024 x 1024
    f, a, b = rng.integers(0, 256, (3, 1024, 1024)).astype(np.float64)
    assert mutual_information_pair(f, a) <= 0.15
    assert mutual_information_pair(f, b) <= 0.15


def test_cc_cases(rng):
    x = rng.uniform(0, 255, (20, 20))
    assert abs(correlation_coefficient(x, x, x) - 1) < 1e-12
    assert abs(correlation_coefficient(255 - x, x, x) + 1) < 1e-12
    assert correlation_coefficient(np.full_like(x, 5), x, x) == 0.0
    assert correlation_coefficient(x, np.full_like(x, 5), x) == pytest.approx(0.5)


def test_ssim_metric(rng):
    x = rng.uniform(0, 255, (24, 24))
    assert abs(ssim_metric(x, x, x) - 1) < 1e-12
    for _ in range(10):
        f, a, b = rng.uniform(0, 255, (3, 14, 16))
        want = 0.5 * (ssim_reference(f, a) + ssim_reference(f, b))
        assert abs(ssim_metric(f, a, b) - want) < 1e-6
    with pytest.raises(ShapeMismatchError):
        ssim_metric(np.zeros((8, 8)), np.zeros((8, 8)), np.zeros((8, 8)))


def test_qabf_perfect_preservation(rng):
    x = np.zeros((40, 40))
    x[10:30, 12:25] = 200.0
    x += rng.uniform(0, 30, x.shape)
    assert qabf(x, x, x) == pytest.approx(perfect_qabf(), abs=1e-12)
    assert perfect_qabf() == pytest.approx(0.97480, abs=1e-5)


def test_qabf_conventions_and_range(rng):
    c = np.full((20, 20), 9.0)
    assert qabf(c, c, c) == 0.0
    for _ in range(100):
        f, a, b = rng.uniform(0, 255, (3, 16, 16))
        assert 0.0 <= qabf(f, a, b) <= 1.0
    flat = np.full((20, 20), 100.0)
    edge = flat.copy()
    edge[:, 10:] = 200
    # fused loses every edge of the sources: nothing preserved
    assert qabf(flat, edge, edge) < 1e-3


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**31 - 1))
def test_report_ranges(seed):
    rng = np.random.default_rng(seed)
    f, a, b = rng.integers(0, 256, (3, 16, 16)).astype(np.float64) * rng.uniform(0, 1, 3)[:, None, None]
    r = evaluate(f, a, b)
    assert 0 <= r.en <= 8 and -1 <= r.cc <= 1 and -1 <= r.ssim <= 1
    assert 0 <= r.qabf <= 1 and r.mi >= 0


def test_permutation_invariance(rng):
    f, a, b = rng.integers(0, 256, (3, 30, 30)).astype(np.float64)
    perm = rng.permutation(900)
    fp, ap, bp = (x.ravel()[perm].reshape(30, 30) for x in (f, a, b))
    assert entropy(fp) == entropy(f)
    assert mutual_information(fp, ap, bp) == pytest.approx(mutual_information(f, a, b), abs=1e-12)
    assert correlation_coefficient(fp, ap, bp) == pytest.approx(correlation_coefficient(f, a, b), abs=1e-12)


def test_aggregate(rng):
    reps = [evaluate(*rng.uniform(0, 255, (3, 16, 16))) for _ in range(3)]
    agg = aggregate(reps)
    assert set(agg) == {"mi", "en", "cc", "ssim", "qabf"}
    assert agg["en"]["mean"] == pytest.approx(np.mean([r.en for r in reps]))
    assert agg["en"]["std"] == pytest.approx(np.std([r.en for r in reps]))
