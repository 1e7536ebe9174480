import numpy as np
import pytest

from hypokinetic.corpus import model_pair, random_field, transport_pair
from hypokinetic.model import ModelParams
from hypokinetic.spectral import make_grid


@pytest.fixture
def grid():
    """Desk-scale (t, x, v) lattice on which random fields stay band-limited."""
    return make_grid(1, 16, 16, 64, 2 * np.pi, 2 * np.pi, 16 * np.pi)


@pytest.fixture
def grid_2d():
    return make_grid(2, 8, 8, 16, 2 * np.pi, 2 * np.pi, 8 * np.pi)


@pytest.fixture
def field(grid):
    return random_field(grid, seed=3)


@pytest.fixture
def transport_case(grid):
    return transport_pair(grid, seed=5)


@pytest.fixture
def model_case(grid):
    return model_pair(grid, seed=7, params=ModelParams(beta=1.0))


@pytest.fixture
def output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("HYPO_OUTPUT_ROOT", str(tmp_path))
    return tmp_path
