import numpy as np
import pytest

from coaxmgrit import build_problem


@pytest.fixture(scope="session")
def small_problem():
    """17-node nonlinear cable problem (default materials and PWM source)."""
    return build_problem(n_nodes=17)


@pytest.fixture(scope="session")
def mid_problem():
    """33-node nonlinear problem used for MGRIT-level checks."""
    return build_problem(n_nodes=33)


@pytest.fixture(scope="session")
def desk_problem():
    """The desk-scale 65-node problem of the acceptance runs."""
    return build_problem(n_nodes=65)


@pytest.fixture(scope="session")
def linear_problem():
    """Constant shield reluctivity: every operator is linear in the state."""
    return build_problem(n_nodes=17, shield_reluctivity=500.0)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
