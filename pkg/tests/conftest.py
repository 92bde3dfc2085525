import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from logbsde.forward import CoefficientSet, simulate_uncontrolled
from logbsde.kernel import TimeGrid, sample_bundle
from logbsde.registry import constant_gamma, constant_sigma, single_mark

settings.register_profile("default", max_examples=40, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


@pytest.fixture(scope="session")
def grid50():
    return TimeGrid.uniform(1.0, 50)


@pytest.fixture(scope="session")
def unit_mark():
    return single_mark(1.0)


@pytest.fixture(scope="session")
def brownian_states(grid50):
    """Standard Brownian motion, 10^5 paths x 50 steps."""
    bundle = sample_bundle(grid50, 1, 100_000, 7)
    co = CoefficientSet(1, constant_sigma(1))
    return simulate_uncontrolled(co, [0.0], bundle)


@pytest.fixture(scope="session")
def jump_states(grid50, unit_mark):
    """Compensated Poisson process (rate 1, jump size 1), 10^5 paths x 50 steps."""
    bundle = sample_bundle(grid50, 1, 100_000, 7, unit_mark)
    co = CoefficientSet(1, lambda t, x: np.zeros((x.shape[0], 1, 1)), constant_gamma(1))
    return simulate_uncontrolled(co, [0.0], bundle)


def pytest_terminal_summary(terminalreporter):
    from test_acceptance import RESULTS

    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
