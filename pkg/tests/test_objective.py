import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sird_ident.discretization import chebyshev_grid, rolling_average
from sird_ident.model import ParameterVector, solve_state
from sird_ident.objective import (
    LUMPED,
    ObjectiveSpec,
    ReducedProblem,
    Setup,
    Target,
    check_stationarity,
    evaluate_reduced_cost,
    project,
    reduced_gradient,
    running_cost,
)

RHO0 = np.array([95.0, 5.0, 0.0])


@pytest.fixture(scope="module")
def setup():
    return Setup.chebyshev(RHO0, 4.0, 300, rel_tol=1e-10, abs_tol=1e-12)


@pytest.fixture(scope="module")
def target(setup):
    state = solve_state(ParameterVector.constant(0.004, 0.15, 0.05), RHO0, grid=setup.grid,
                        rel_tol=1e-10, abs_tol=1e-12)
    rho = state.rho + 2.0 * np.sin(3 * setup.grid.nodes)[:, None]
    from sird_ident.discretization import Interpolant
    return Target(Interpolant(setup.grid.nodes, rho), "synthetic")


def fd_gradient(prob, x, h=1e-6):
    out = np.empty_like(x)
    for k in range(x.size):
        e = np.zeros_like(x)
        e[k] = h
        out[k] = (prob.value(x + e) - prob.value(x - e)) / (2 * h)
    return out


SPECS = {
    "r1": ObjectiveSpec.r1(100.0**2),
    "r2": ObjectiveSpec.r2(0.3, 100.0**2),
    "r2_lumped": ObjectiveSpec.r2([1e-3, 2e-3, 5e-3], 100.0**2, LUMPED),
    "r3": ObjectiveSpec.r3(0.1, [1.0, 2.0, 0.5], 100.0**2),
    "data": ObjectiveSpec.data_driven([1e-2, 1e-3, 1e-3], [1e-1, 1e-1, 5.0], 10.0),
}


@pytest.mark.parametrize("name", list(SPECS))
def test_gradient_matches_finite_differences(name, setup, target, rng):
    spec = SPECS[name]
    upper = (0.02, 1.0, 1.0)
    alpha0 = ParameterVector.constant(0.01, 0.2, 0.1, upper=upper)
    prob = ReducedProblem(alpha0, target, spec, setup)
    for _ in range(3):
        x = rng.uniform([1e-3, 0.05, 0.01], [0.019, 0.9, 0.9])
        if name == "data":
            x[1:] = rng.uniform(0.5, 0.7, 2)  # gamma + m > 1: penalty active
        g = prob.gradient(x)
        fd = fd_gradient(prob, x)
        assert np.linalg.norm(g - fd) <= 1e-4 * np.linalg.norm(fd)


def test_gradient_matches_finite_differences_for_cell_average_target(setup, target, rng):
    # jumps between cells must not leak quadrature error into the cost
    cells = Target(rolling_average(target.itp, 25), "rolling_average")
    alpha0 = ParameterVector.constant(0.01, 0.2, 0.1, upper=(0.02, 1.0, 1.0))
    prob = ReducedProblem(alpha0, cells, SPECS["r2_lumped"], setup)
    for _ in range(3):
        x = rng.uniform([1e-3, 0.05, 0.01], [0.019, 0.9, 0.9])
        fd = fd_gradient(prob, x)
        assert np.linalg.norm(prob.gradient(x) - fd) <= 1e-4 * np.linalg.norm(fd)


def test_gradient_with_fixed_parameter(setup, target):
    alpha0 = ParameterVector.constant(0.01, 0.2, 0.05, fixed=("mort",), upper=(0.02, 1, 1))
    prob = ReducedProblem(alpha0, target, SPECS["r2"], setup)
    x = np.array([0.008, 0.3])
    gv = prob.gradient_vector(x)
    assert gv.entries[2] == 0.0 and gv.flat().size == 2
    assert np.allclose(gv.flat(), fd_gradient(prob, x), rtol=1e-4)


def test_time_dependent_directional_derivative(setup, target, rng):
    grid = setup.grid
    tau = grid.nodes / grid.T
    alpha0 = ParameterVector.time_dependent(grid, 0.01 + 0.004 * tau, 0.3 - 0.1 * tau,
                                            0.05 + 0.02 * tau**2, upper=(0.02, 1, 1))
    prob = ReducedProblem(alpha0, target, SPECS["data"], setup)
    x = prob.x0
    g = prob.gradient(x)
    for _ in range(3):
        c = rng.normal(size=(3, 3))
        direction = np.concatenate([np.polyval(c[k], tau) * s
                                    for k, s in enumerate((0.005, 0.1, 0.1))])
        h = 1e-3  # per-node perturbations are tiny; smaller steps drown in roundoff
        fd = (prob.value(x + h * direction) - prob.value(x - h * direction)) / (2 * h)
        analytic = float(np.sum(prob.metric * g * direction))
        assert analytic == pytest.approx(fd, rel=1e-4)


def test_exact_fit_gives_zero_cost_and_gradient():
    setup = Setup.chebyshev(RHO0, 3.0, 50)
    alpha = ParameterVector.constant(0.004, 0.15, 0.05)
    tgt = Target(solve_state(alpha, RHO0, grid=setup.grid).interpolant())
    assert evaluate_reduced_cost(alpha, tgt, ObjectiveSpec.r1(), setup) == 0.0
    g = reduced_gradient(alpha, tgt, ObjectiveSpec.r1(), setup)
    assert np.array_equal(g.flat(), np.zeros(3))
    spec = ObjectiveSpec.r2(0.2, scale=4.0, reg_mode=LUMPED)
    assert evaluate_reduced_cost(alpha, tgt, spec, setup) == pytest.approx(
        0.1 * (0.004**2 + 0.15**2 + 0.05**2))
    integrated = ObjectiveSpec.r2(0.2, scale=4.0)
    assert evaluate_reduced_cost(alpha, tgt, integrated, setup) == pytest.approx(
        3.0 * 0.1 * (0.004**2 + 0.15**2 + 0.05**2) / 4.0)


def test_running_cost_examples():
    z = np.zeros(3)
    assert running_cost(z, z, z, ObjectiveSpec.r1()) == 0.0
    rho, tgt = np.array([1.0, 2.0, 3.0]), np.array([0.0, 2.0, 1.0])
    r1 = running_cost(rho, [0.3, 0.4, 0.0], tgt, ObjectiveSpec.r1())
    assert r1 == 2.5
    r2 = running_cost(rho, [0.3, 0.4, 0.0], tgt, ObjectiveSpec.r2(2.0),
                      variable=(True, True, False))
    assert r2 == pytest.approx(r1 + 0.25)
    pen = ObjectiveSpec.data_driven(0.0, 0.0, 10.0)
    assert running_cost(z, [0.1, 0.7, 0.5], z, pen) == pytest.approx(0.4)


def test_terminal_term():
    setup = Setup.chebyshev(RHO0, 2.0, 30)
    alpha = ParameterVector.constant(0.004, 0.15, 0.05)
    state = solve_state(alpha, RHO0, grid=setup.grid)
    vals = state.rho.copy()
    vals[-1] += [1.0, 0.0, 2.0]
    from sird_ident.discretization import Interpolant
    tgt = Target(Interpolant(setup.grid.nodes, vals))
    spec = ObjectiveSpec.r3(0.0, [3.0, 1.0, 0.5])
    tail = evaluate_reduced_cost(alpha, tgt, spec, setup) - evaluate_reduced_cost(
        alpha, tgt, ObjectiveSpec.r1(), setup)
    assert tail == pytest.approx(0.5 * (9 * 1 + 0.25 * 4))
    alt = ObjectiveSpec.r3(0.0, 4.0, T=2.0)
    assert np.allclose(alt.terminal_weights, 2.0)


def test_cost_monotone_in_theta(setup, target):
    alpha = ParameterVector.constant(0.01, 0.3, 0.1)
    vals = [evaluate_reduced_cost(alpha, target, ObjectiveSpec.r2(t, 1e4), setup)
            for t in (0.0, 1e-3, 1e-1, 1.0)]
    assert all(b >= a for a, b in zip(vals, vals[1:]))
    assert min(vals) >= 0


def test_spec_validation():
    with pytest.raises(ValueError):
        ObjectiveSpec.r2(-1.0)
    with pytest.raises(ValueError):
        ObjectiveSpec.r1(0.0)
    with pytest.raises(ValueError):
        ObjectiveSpec("r2", 1.0, 1.0, "sometimes")
    spec = ObjectiveSpec.data_driven([1e-6, 1e-8, 1e-9], [1e-4, 1e-4, 5e2], 10.0)
    back = ObjectiveSpec.from_dict(spec.to_dict())
    assert back.to_dict() == spec.to_dict()


def test_project_examples():
    a = ParameterVector.constant(1.5, -0.2, 0.5)
    assert np.allclose(project(a).constant_values(), [1, 0, 0.5])
    b = ParameterVector.constant(0.5, 0.2, 0.1, upper=(1e-2, 1, 1))
    assert project(b).constant_values()[0] == 0.01
    ok = ParameterVector.constant(0.3, 0.2, 0.1)
    assert np.array_equal(project(ok).constant_values(), ok.constant_values())


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-2, 3), min_size=6, max_size=6))
def test_project_idempotent_and_nonexpansive(vals):
    a = ParameterVector.constant(*vals[:3])
    b = ParameterVector.constant(*vals[3:])
    pa, pb = project(a), project(b)
    assert np.array_equal(project(pa).constant_values(), pa.constant_values())
    d_before = np.linalg.norm(np.array(vals[:3]) - np.array(vals[3:]))
    d_after = np.linalg.norm(pa.constant_values() - pb.constant_values())
    assert d_after <= d_before + 1e-15


def test_stationarity_examples():
    lo, hi = np.zeros(2), np.ones(2)
    assert check_stationarity([0.5, 0.5], [0.0, 0.0], 1e-3, lo, hi).passed
    assert check_stationarity([0.0, 0.5], [0.3, 0.0], 1e-3, lo, hi).passed
    rep = check_stationarity([0.0, 0.5], [-0.3, 0.0], 1e-3, lo, hi)
    assert not rep.passed and rep.violations[0]["where"] == "lower"
    rep = check_stationarity([1.0, 0.5], [0.3, 0.2], 1e-3, lo, hi)
    assert rep.n_violations == 2 and rep.fraction_ok == 0.0
    assert check_stationarity([1.0], [-5.0], 1e-3, [0.0], [1.0]).passed


def test_reduced_problem_caches_and_counts(setup, target):
    alpha0 = ParameterVector.constant(0.01, 0.2, 0.1, upper=(0.02, 1, 1))
    prob = ReducedProblem(alpha0, target, SPECS["r1"], setup)
    x = prob.x0
    prob.value(x)
    prob.value(x)
    prob.gradient(x)
    prob.gradient(x)
    assert prob.n_value == 1 and prob.n_gradient == 1
    assert np.array_equal(prob.project(np.array([1.0, -1.0, 0.5])), [0.02, 0.0, 0.5])


def test_reduced_problem_rejects_foreign_grid(setup, target):
    other = chebyshev_grid(10, 4.0)
    alpha0 = ParameterVector.time_dependent(other, 0.01, 0.2, 0.1)
    with pytest.raises(ValueError):
        ReducedProblem(alpha0, target, SPECS["r1"], setup)
