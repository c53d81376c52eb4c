import numpy as np
import pytest

from navslip.fields import MappedGrid
from navslip.geometry import build_geometry, flat_geometry

CURVED = ({"modes": [[1, 0.0, 0.1]]}, {"mean": 1.0, "modes": [[1, 0.0, 0.1]]})
GENERIC = ({"modes": [[1, 0.2, 0.0]]}, 1.0)


@pytest.fixture
def flat():
    return flat_geometry(2.0, 32)


@pytest.fixture
def curved():
    return build_geometry(2.0, *CURVED, 32)


@pytest.fixture
def generic():
    return build_geometry(2.0, *GENERIC, 32)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def grid_for(geom, n2=32):
    return MappedGrid(geom, n2)


def order(errors):
    e = np.asarray(errors, dtype=float)
    return np.log2(e[:-1] / e[1:])
