import numpy as np
import pytest

from sird_ident.discretization import chebyshev_grid
from sird_ident.model import ParameterVector, solve_state
from sird_ident.objective import ObjectiveSpec, ReducedProblem, Setup, Target

RHO0_KNOWN = np.array([199.0, 1.0, 0.0])
ALPHA_KNOWN = (0.03, 0.6, 0.0)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def known_setup():
    return Setup.chebyshev(RHO0_KNOWN, 10.0, 200)


@pytest.fixture(scope="session")
def known_target(known_setup):
    state = solve_state(ParameterVector.constant(*ALPHA_KNOWN), RHO0_KNOWN,
                        grid=known_setup.grid)
    return Target(state.interpolant(), "synthetic")


@pytest.fixture(scope="session")
def known_problem(known_setup, known_target):
    alpha0 = ParameterVector.constant(0.63696169, 0.26978671, 0.0, fixed=("mort",))
    return ReducedProblem(alpha0, known_target, ObjectiveSpec.r1(200.0**2), known_setup)


@pytest.fixture(scope="session")
def tight_setup():
    """Experiment-1 system with tolerances tight enough for differencing."""
    return Setup.chebyshev(RHO0_KNOWN, 10.0, 400, rel_tol=1e-10, abs_tol=1e-13)


@pytest.fixture(scope="session")
def small_grid():
    return chebyshev_grid(40, 2.0)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
