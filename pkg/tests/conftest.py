import numpy as np
import pytest

from lutfuse.imgio import ImagePair
from lutfuse.synthetic import synthetic_dataset, synthetic_pair


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_pair():
    return synthetic_pair(np.random.default_rng(3), 48, 40)


@pytest.fixture(scope="session")
def tiny_dataset():
    return synthetic_dataset(4, seed=11, height=64, width=64)


def make_pair(ir, vis_y):
    """Pair whose visible image is grey with luminance ``vis_y``."""
    vis = np.repeat(np.asarray(vis_y, np.float32)[..., None], 3, axis=-1)
    return ImagePair(np.asarray(ir, np.float32), vis)


# acceptance outcomes, filled by test_acceptance and printed after the run
ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
