import numpy as np
import pytest

from lattice_efimov.two_body import ModelParams, compute_mu0_with_error

# Lines recorded by the acceptance module, echoed in the terminal summary.
ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def mu0():
    return compute_mu0_with_error(1e-10)[0]


@pytest.fixture(scope="session")
def params_for(mu0):
    cache = {}

    def make(gamma):
        if gamma not in cache:
            m, err, _ = compute_mu0_with_error(1e-10)
            cache[gamma] = ModelParams(float(gamma), m, err)
        return cache[gamma]

    return make


@pytest.fixture(scope="session")
def p1(params_for):
    return params_for(1.0)


@pytest.fixture
def rng():
    return np.random.default_rng(20240611)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
