import sys

import numpy as np
import pytest

from utilbsde import MarketModel, simulate_brownian, uniform_grid


@pytest.fixture(scope="session")
def merton():
    return MarketModel(1, 1, 0.2, 1.0, epsilon=0.5, K=2.0)


@pytest.fixture(scope="session")
def small_ens(merton):
    # 2e4 paths is enough for unit-level sanity checks
    return simulate_brownian(merton, uniform_grid(1.0, 32), 20_000, seed=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    mod = sys.modules.get("test_acceptance")
    if mod is None or not mod.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for k in sorted(mod.RESULTS):
        terminalreporter.write_line(mod.RESULTS[k])
