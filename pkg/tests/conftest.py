import numpy as np
import pytest

from efmsig.core.signature import PiecewisePath


@pytest.fixture
def rng():
    return np.random.default_rng(20240917)


def random_path(rng, samples: int, dim: int, time_augmented: bool = False, span: float = 1.0) -> PiecewisePath:
    """Random walk on an irregular grid over [0, span]."""
    times = np.sort(rng.uniform(0.0, span, samples - 2))
    times = np.concatenate([[0.0], times, [span]])
    values = np.cumsum(rng.normal(scale=0.5, size=(samples, dim)), axis=0)
    return PiecewisePath(times, values, time_augmented)


@pytest.fixture
def make_path(rng):
    def build(samples: int = 8, dim: int = 1, time_augmented: bool = False, span: float = 1.0):
        return random_path(rng, samples, dim, time_augmented, span)

    return build
