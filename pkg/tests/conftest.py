import numpy as np
import pytest
from hypothesis import settings

from fieldekf.simulator import SimConfig, simulate

settings.register_profile("default", max_examples=40, deadline=None)
settings.load_profile("default")


def small_sim_config(**kw) -> SimConfig:
    base = dict(duration=4.0, rows=48, cols=48, seed=3)
    base.update(kw)
    return SimConfig(**base)


@pytest.fixture(scope="session")
def small_dataset():
    return simulate(small_sim_config())


@pytest.fixture(scope="session")
def noise_free_dataset():
    return simulate(small_sim_config(sigma_a=0.0, g_a=0.0, noise_sigma=0.0, duration=100 / 15 + 1e-6))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def random_spd(rng, n, scale=1.0):
    M = rng.standard_normal((n, n))
    return scale * (M @ M.T / n + 0.5 * np.eye(n))


# one line per acceptance criterion, printed at the end of the session
ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for n in sorted(ACCEPTANCE):
        terminalreporter.write_line(ACCEPTANCE[n])
