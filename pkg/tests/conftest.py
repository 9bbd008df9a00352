import numpy as np
import pytest

from fracrearr.grid import Domain, build_grid
from fracrearr.kernel import KernelParams
from fracrearr.operator import assemble
from fracrearr.rearrangement import RearrangementClass, solve_frank_wolfe

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda t: t[0]):
            terminalreporter.write_line(line[1])


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


@pytest.fixture(scope="session")
def op256():
    """Unnormalized s = 0.5 operator on (-1, 1) with 256 cells."""
    g = build_grid(Domain.interval(), 256)
    return assemble(g, KernelParams(1, 0.5))


@pytest.fixture(scope="session")
def fw256(op256):
    cls = RearrangementClass.fraction(op256.grid, 0.5)
    return solve_frank_wolfe(op256, cls)
