import numpy as np
import pytest

from pexml.field import ScalarCellField, generate_channel_field
from pexml.grid import build_coarse_decomposition, build_fine_grid


@pytest.fixture(scope="session")
def grid8():
    return build_fine_grid(8)


@pytest.fixture(scope="session")
def dec8(grid8):
    return build_coarse_decomposition(grid8, Nc=2, layers=1)


@pytest.fixture(scope="session")
def kappa8(grid8):
    return generate_channel_field(
        grid8, background=1.0, contrast=1.0e3,
        channels=((0.10, 0.90, 0.30, 0.42), (0.55, 0.70, 0.05, 0.95)),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def random_field(grid, rng, low=0.5, high=3.0):
    return ScalarCellField(rng.uniform(low, high, size=grid.tri_count))
