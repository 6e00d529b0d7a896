import numpy as np
import pytest

from adkd.backbone import FeaturePyramid
from adkd.core import Tensor


def random_pyramid(rng, shapes, scale=1.0, batch=None, requires_grad=False):
    """A pyramid of float64 levels with the given ``(C, H, W)`` shapes."""
    levels = []
    for k, shape in zip((2, 3, 4), shapes):
        full = shape if batch is None else (batch,) + tuple(shape)
        levels.append((k, Tensor(scale * rng.standard_normal(full), requires_grad=requires_grad)))
    return FeaturePyramid(levels)


def random_shapes(rng, max_shape=(4, 6, 6), n_levels=None):
    n = n_levels or int(rng.integers(1, 4))
    return [tuple(int(rng.integers(1, m + 1)) for m in max_shape) for _ in range(n)]


def like(pyramid, arrays):
    return FeaturePyramid([(k, Tensor(a)) for (k, _), a in zip(pyramid, arrays)])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


# --- acceptance summary -------------------------------------------------------------

ACCEPTANCE: dict[int, str] = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
