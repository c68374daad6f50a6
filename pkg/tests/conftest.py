import numpy as np
import pytest
from hypothesis import HealthCheck, settings

from kgite.synth_ehr import SimulationConfig, random_structure, simulate_cohort

settings.register_profile("kgite", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("kgite")


@pytest.fixture(scope="session")
def structure():
    return random_structure(seed=3, pilot_patients=200)


@pytest.fixture(scope="session")
def cohort(structure):
    return simulate_cohort(SimulationConfig(structure, n_patients=400, rng_seed=11))


@pytest.fixture(scope="session")
def noiseless_structure():
    return random_structure(seed=5, pilot_patients=200, severity_noise=0.0, lab_noise_fraction=0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES, key=lambda s: int(s.split()[1].rstrip(":"))):
            terminalreporter.write_line(line)
