import numpy as np
import pytest

from cprain.arma import LocationData, ModelParams
from cprain.forecast import simulate_forward

ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def simulate_location(theta: ModelParams, n_days: int, seed: int) -> tuple[LocationData, np.ndarray]:
    """Standard-normal inputs and rainfall simulated forward from ``theta``."""
    rng = np.random.default_rng(seed)
    x = rng.standard_normal((n_days, theta.n_inputs))
    y, z = simulate_forward(theta, None, None, x, rng, reset=True)
    return LocationData(x, y), z


@pytest.fixture
def small_theta():
    return ModelParams(-0.3, 1.2, -0.5, [0.4], [0.2], [0.1], [0.25], [0.15], [0.1], [0.05])


@pytest.fixture
def small_data(small_theta):
    return simulate_location(small_theta, 120, seed=7)
