import numpy as np
import pytest

from certrb import make_problem

ACCEPTANCE_LINES: list[str] = []


@pytest.fixture(scope="session")
def bm1():
    """Benchmark 1 on a coarse mesh (198 free dofs)."""
    return make_problem("graetz_distributed", 8, 8)


@pytest.fixture(scope="session")
def bm2():
    return make_problem("graetz_boundary", 8, 8)


@pytest.fixture(scope="session")
def bm1_tiny():
    """28 nodes, 12 free dofs."""
    return make_problem("graetz_distributed", 1, 1)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
