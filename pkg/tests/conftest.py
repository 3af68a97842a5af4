import numpy as np
import pytest

from modalpose.fem import assemble
from modalpose.fixtures import FixtureSpec, load_bundled_fixture, tongue_fixture
from modalpose.mesh import TetMesh, midsagittal_path
from modalpose.modal import solve_modes
from modalpose.shape_db import generate_database

ACCEPTANCE_LINES = []

SMALL_SPEC = FixtureSpec(n_length=6, n_height=2, n_width=2)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def unit_tet():
    return TetMesh.from_arrays([[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]], [[0, 1, 2, 3]])


@pytest.fixture
def two_tets():
    nodes = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1], [1, 1, 1]]
    return TetMesh.from_arrays(nodes, [[0, 1, 2, 3], [1, 2, 3, 4]])


@pytest.fixture(scope="session")
def fixture():
    return tongue_fixture()


@pytest.fixture(scope="session")
def tongue():
    return load_bundled_fixture()


@pytest.fixture(scope="session")
def tongue_system(tongue):
    return assemble(tongue)


@pytest.fixture(scope="session")
def tongue_basis(tongue, tongue_system):
    return solve_modes(tongue_system, 30, mesh=tongue)


@pytest.fixture(scope="session")
def tongue_path(tongue):
    return midsagittal_path(tongue)


@pytest.fixture(scope="session")
def small_db(tongue, tongue_basis, tongue_path):
    return generate_database(tongue, tongue_basis, tongue_path, 200, seed=3)


@pytest.fixture(scope="session")
def full_db(tongue, tongue_basis, tongue_path):
    return generate_database(tongue, tongue_basis, tongue_path, 1000, seed=0)


@pytest.fixture(scope="session")
def small_block():
    return tongue_fixture(SMALL_SPEC).mesh


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
