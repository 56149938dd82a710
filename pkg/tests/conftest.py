import numpy as np
import pytest

from rwre_ldp.environment import deterministic_law, kernel_d1, make_law
from rwre_ldp.walk_sim import harvest_cycles

# acceptance lines collected by tests/test_acceptance.py
ACCEPTANCE: dict[int, str] = {}


@pytest.fixture(scope="session")
def law06():
    return deterministic_law(kernel_d1(0.6))


@pytest.fixture(scope="session")
def law78():
    return make_law(1, [kernel_d1(0.7), kernel_d1(0.8)], [0.5, 0.5])


@pytest.fixture(scope="session")
def law37():
    return make_law(1, [kernel_d1(0.3), kernel_d1(0.7)], [0.5, 0.5])


@pytest.fixture(scope="session")
def nest_law():
    return make_law(1, [kernel_d1(0.85), kernel_d1(0.4)], [0.5, 0.5])


@pytest.fixture(scope="session")
def ens06(law06):
    return harvest_cycles(law06, None, 100_000, seed=3, runs=4)


@pytest.fixture(scope="session")
def ens06_small(law06):
    return harvest_cycles(law06, None, 20_000, seed=17, runs=2)


@pytest.fixture(scope="session")
def nest_ens(nest_law):
    return harvest_cycles(nest_law, [1.0], 100_000, seed=3, runs=4)


@pytest.fixture(scope="session")
def law2d():
    # non-nestling: both drifts have positive first coordinate
    return make_law(2, [[0.4, 0.2, 0.25, 0.15], [0.35, 0.15, 0.2, 0.3]], [0.5, 0.5])


@pytest.fixture(scope="session")
def ens2d(law2d):
    return harvest_cycles(law2d, None, 40_000, seed=5, runs=4)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
