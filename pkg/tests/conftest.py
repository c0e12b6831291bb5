import numpy as np
import pytest

from semipde.models import get_model
from semipde.solver import SolverConfig


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def small_solver():
    """Coarse, fast solver settings for unit tests."""
    return SolverConfig(n_nodes=24, c_cfl=0.8, min_steps=60)


@pytest.fixture
def case1():
    return get_model("case1")


@pytest.fixture
def example3():
    return get_model("example3")


def tight_case1(theta0=0.01, lo=0.004, hi=0.02, ic_seed=None):
    """Case-1 instance in the strongly identified low-diffusivity regime."""
    m = get_model("case1", theta0=[theta0], ic_seed=ic_seed)
    m.theta_box = np.array([[lo, hi]])
    return m
