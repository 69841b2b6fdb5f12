import numpy as np
import pytest

from implied_impact.game import GameSpec, solve_game
from implied_impact.kernels import ConstantKernel, TimeGrid, build_matrices

ACCEPTANCE_LINES = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for key in sorted(ACCEPTANCE_LINES):
        terminalreporter.write_line(ACCEPTANCE_LINES[key])


@pytest.fixture(scope="session")
def grid25():
    return TimeGrid.equispaced(25)


@pytest.fixture(scope="session")
def game25(grid25):
    """Two-agent unit constant kernel game, theta = 1, X = (1, 0)."""
    return solve_game(GameSpec(grid25, ConstantKernel(1.0), 1.0, [1.0, 0.0]))


@pytest.fixture(scope="session")
def mats25(grid25):
    return build_matrices(ConstantKernel(1.0), grid25, 1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
