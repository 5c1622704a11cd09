import numpy as np
import pytest

import tgcmpc
from tgcmpc.synthesis import line_search_a_alpha, synthesize_gcc, synthesize_mrpi
from tgcmpc.tube import precompute_tube_constants


@pytest.fixture(scope="session")
def problem():
    return tgcmpc.load_bundled_problem()


@pytest.fixture(scope="session")
def gcc(problem):
    return synthesize_gcc(problem.system, problem.cost)


@pytest.fixture(scope="session")
def rpi(problem, gcc):
    return line_search_a_alpha(problem.system, synthesize_mrpi,
                               objective="logdet", K_R=gcc.K)


@pytest.fixture(scope="session")
def consts(problem, gcc, rpi):
    return precompute_tube_constants(problem.system, problem.constraints, gcc, rpi)


@pytest.fixture(scope="session")
def feasible_x0():
    # comfortably inside the tube controller's feasible domain at horizon 5
    return np.array([0.55, -0.55, 0.55])
