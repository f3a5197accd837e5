import numpy as np
import pytest

from orbstab.dynsys import build_system
from orbstab.riccati import gain_from_riccati, solve_prde
from orbstab.transverse import comparison_system, tvl_orthogonal

ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)


@pytest.fixture(scope="session")
def bh1():
    return build_system("bh-circle", {"a": 1.0})


@pytest.fixture(scope="session")
def tvl1(bh1):
    return tvl_orthogonal(*bh1, 512)


@pytest.fixture(scope="session")
def cmp1(bh1):
    return comparison_system(*bh1, 512)


@pytest.fixture(scope="session")
def riccati1(cmp1):
    return solve_prde(cmp1)


@pytest.fixture(scope="session")
def K1(riccati1, cmp1):
    return gain_from_riccati(riccati1, cmp1)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
