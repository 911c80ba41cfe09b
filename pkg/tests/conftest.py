import numpy as np
import pytest

from rbanova.fem import SensorSet, UniformGrid, assemble_affine
from rbanova.random_field import ExponentialCovariance, build_kl


class Desk:
    def __init__(self, alpha: float):
        self.grid = UniformGrid(16)
        self.kl = build_kl(ExponentialCovariance(0.25, alpha), self.grid)
        self.ops = assemble_affine(self.grid, self.kl)
        self.sensors = SensorSet.tensor_layout(self.grid, 3)


@pytest.fixture(scope="session")
def desk():
    """17x17 nodes, alpha = 5 (M = 4), 3x3 sensors."""
    return Desk(5.0)


@pytest.fixture(scope="session")
def desk8():
    """17x17 nodes, alpha = 5/2 (M = 8)."""
    return Desk(2.5)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    from oracles import ACCEPTANCE_LINES

    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for _, line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
