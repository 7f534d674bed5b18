import numpy as np
import pytest

from flowmesh.mesh import VolumeMesh
from flowmesh.synth import generate_phantom

REGULAR_TET = np.array(
    [
        [1.0, 1.0, 1.0],
        [1.0, -1.0, -1.0],
        [-1.0, 1.0, -1.0],
        [-1.0, -1.0, 1.0],
    ]
)

# unit cube corners in (di, dj, dk) order 000, 100, 010, 110, 001, 101, 011, 111
CUBE_VERTS = np.array([[i, j, k] for k in (0, 1) for j in (0, 1) for i in (0, 1)], dtype=float)
CUBE_TETS = np.array([(0, 1, 2, 4), (3, 1, 2, 7), (5, 1, 4, 7), (6, 2, 4, 7), (1, 2, 4, 7)])


@pytest.fixture(scope="session")
def regular_tet():
    return VolumeMesh(REGULAR_TET, [[0, 1, 2, 3]])


@pytest.fixture(scope="session")
def unit_cube():
    return VolumeMesh(CUBE_VERTS, CUBE_TETS)


@pytest.fixture(scope="session")
def straight():
    return generate_phantom(kind="straight", target_nodes=600, with_image=False)


@pytest.fixture(scope="session")
def bifurcation():
    return generate_phantom(kind="bifurcation", target_nodes=800, with_image=False)


@pytest.fixture(scope="session")
def straight_2k():
    return generate_phantom(kind="straight", target_nodes=2000, with_image=False)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
