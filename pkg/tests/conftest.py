import numpy as np
import pytest

from gspmesh import shapes
from gspmesh.mesh import Mesh


def tetrahedron():
    v = np.array([[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]])
    f = np.array([[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]])
    return Mesh(v, f)


@pytest.fixture
def tet():
    return tetrahedron()


@pytest.fixture(scope="session")
def small_corpus():
    return shapes.corpus("small")


@pytest.fixture(scope="session")
def bumpy():
    return shapes.bumpy_sphere(4)


# acceptance criteria report ------------------------------------------------

ACCEPTANCE_RESULTS = {}


@pytest.fixture
def record_criterion():
    """Store one verdict line per acceptance criterion; printed at session end."""

    def record(number, ok, detail):
        ACCEPTANCE_RESULTS[number] = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
        return ok

    return record


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE_RESULTS):
        terminalreporter.write_line(ACCEPTANCE_RESULTS[number])
