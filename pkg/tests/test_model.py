import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import solve_ivp

from sird_ident.discretization import chebyshev_grid
from sird_ident.model import (
    InvariantViolation,
    ParameterVector,
    adjoint_bound,
    adjoint_rhs,
    basic_reproduction_number,
    sensitivity_indices,
    solve_adjoint,
    solve_state,
    state_jacobian,
    state_rhs,
)
from sird_ident.objective import Target


def test_state_rhs_examples():
    assert np.allclose(state_rhs([199, 1, 0], (0.03, 0.6, 0)), [-5.97, 5.37, 0.6])
    assert np.array_equal(state_rhs([10, 0, 3], (0.5, 0.2, 0.1)), [0, 0, 0])


def test_state_rhs_mass_loss(rng):
    for _ in range(20):
        rho, a = rng.uniform(0, 100, 3), rng.uniform(0, 1, 3)
        assert state_rhs(rho, a).sum() == pytest.approx(-a[2] * rho[1], abs=1e-12)


def test_jacobian_examples_and_fd(rng):
    b, g, m = 0.3, 0.2, 0.1
    assert np.allclose(state_jacobian([1, 0, 0], (b, g, m)),
                       [[0, -b, 0], [0, b - g - m, 0], [0, g, 0]])
    assert np.array_equal(state_jacobian([3, 2, 1], (0, 0, 0)), np.zeros((3, 3)))
    for _ in range(10):
        rho, a = rng.uniform(0, 10, 3), rng.uniform(0, 1, 3)
        fd = np.empty((3, 3))
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd[:, k] = (state_rhs(rho + e, a) - state_rhs(rho - e, a)) / (2 * h)
        assert np.allclose(state_jacobian(rho, a), fd, atol=1e-7)


def test_adjoint_rhs_matrix_form(rng):
    assert np.array_equal(adjoint_rhs(np.zeros(3), [1, 2, 3], (0.1, 0.2, 0.3), np.zeros(3)),
                          np.zeros(3))
    assert np.allclose(adjoint_rhs(np.ones(3), [5, 2, 1], (0.1, 0.2, 0.3), np.zeros(3)),
                       [0, 0.3, 0])
    for _ in range(20):
        q, rho, a, d = rng.normal(size=3), rng.uniform(0, 50, 3), rng.uniform(0, 1, 3), rng.normal(size=3)
        ref = -state_jacobian(rho, a).T @ q - d
        assert np.allclose(adjoint_rhs(q, rho, a, d), ref, rtol=1e-14, atol=1e-12)


def test_adjoint_rhs_linear_in_q(rng):
    rho, a = rng.uniform(0, 50, 3), rng.uniform(0, 1, 3)
    q1, q2 = rng.normal(size=(2, 3))
    z = np.zeros(3)
    assert np.allclose(adjoint_rhs(2 * q1 - q2, rho, a, z),
                       2 * adjoint_rhs(q1, rho, a, z) - adjoint_rhs(q2, rho, a, z))


def test_outbreak_and_conservation():
    state = solve_state(ParameterVector.constant(0.03, 0.6, 0.0), [199, 1, 0], 10.0)
    k = int(np.argmax(state.rho[:, 1]))
    assert 0 < k < state.grid.size - 1
    assert np.max(np.abs(state.rho.sum(axis=1) - 200)) <= 1e-6 * 200
    assert state.grid.size == 202


def test_disease_free_equilibrium():
    state = solve_state(ParameterVector.constant(0.5, 0.2, 0.1), [50, 0, 0], 5.0)
    assert np.allclose(state.rho, [50, 0, 0], rtol=0, atol=1e-12)


def test_state_matches_reference():
    alpha = ParameterVector.constant(0.07, 0.1, 0.05)
    grid = chebyshev_grid(200, 3.0)
    state = solve_state(alpha, [380, 20, 0], grid=grid, rel_tol=1e-10, abs_tol=1e-10)
    ref = solve_ivp(lambda t, y: state_rhs(y, (0.07, 0.1, 0.05)), (0, 3), [380, 20, 0],
                    t_eval=grid.nodes, method="DOP853", rtol=1e-13, atol=1e-12)
    assert np.allclose(state.rho, ref.y.T, atol=1e-6)
    assert np.allclose(state.rho_dot, [state_rhs(r, (0.07, 0.1, 0.05)) for r in state.rho])


def test_state_is_deterministic():
    alpha = ParameterVector.constant(0.2, 0.3, 0.1)
    a = solve_state(alpha, [90, 10, 0], 4.0)
    b = solve_state(alpha, [90, 10, 0], 4.0)
    assert np.array_equal(a.rho, b.rho)


def test_time_dependent_matches_reference():
    grid = chebyshev_grid(60, 5.0)
    beta = 0.01 + 0.005 * np.sin(grid.nodes)
    alpha = ParameterVector.time_dependent(grid, beta, 0.2, 0.05)
    state = solve_state(alpha, [95, 5, 0], grid=grid, rel_tol=1e-10, abs_tol=1e-10)
    ref = solve_ivp(lambda t, y: state_rhs(y, alpha.at(t)), (0, 5), [95, 5, 0],
                    t_eval=grid.nodes, rtol=1e-12, atol=1e-12, method="DOP853",
                    max_step=float(np.diff(grid.nodes).min()))
    assert np.allclose(state.rho, ref.y.T, atol=1e-5)


def test_invariant_violation_is_reported():
    # a loose solve drifts by ~1e-12; far beyond a 1e-15 tolerance it aborts,
    # within ten times the tolerance it only warns
    alpha = ParameterVector.constant(0.9, 0.05, 0.0)
    kw = dict(rel_tol=1e-1, abs_tol=1.0)
    with pytest.raises(InvariantViolation):
        solve_state(alpha, [990, 10, 0], 10.0, tol_inv=1e-15, **kw)
    with pytest.warns(RuntimeWarning):
        solve_state(alpha, [990, 10, 0], 10.0, tol_inv=2e-13, **kw)


def test_state_rejects_bad_input():
    with pytest.raises(ValueError):
        solve_state(ParameterVector.constant(0.1, 0.1, 0), [-1, 1, 0], 1.0)
    with pytest.raises(ValueError):
        solve_state(ParameterVector.constant(0.1, 0.1, 0), [1, 1, 0], 0.0)


@settings(max_examples=40, deadline=None)
@given(st.tuples(st.floats(0, 1), st.floats(0, 1), st.floats(0, 1)),
       st.floats(1, 1000), st.floats(0.001, 0.5), st.floats(0.5, 10))
def test_invariant_region_property(alpha, n, frac_i, T):
    rho0 = np.array([n * (1 - frac_i), n * frac_i, 0.0])
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        state = solve_state(ParameterVector.constant(*alpha), rho0, T, 50)
    total = state.rho.sum(axis=1)
    assert state.rho.min() >= -1e-6 * n
    assert total.max() <= n * (1 + 1e-6)
    assert np.max(np.diff(total)) <= 1e-8 * n + 1e-6 * n
    assert np.max(np.diff(state.rho[:, 0])) <= 1e-6 * n


def test_parameter_vector_projection_and_layout():
    a = ParameterVector.constant(1.5, -0.2, 0.5)
    p = a.project()
    assert np.allclose(p.constant_values(), [1.0, 0.0, 0.5])
    assert p.project().as_dict() == p.as_dict()
    b = ParameterVector.constant(0.5, 0.2, 0.1, fixed=("gamma",), upper=(1e-2, 1, 1))
    assert np.allclose(b.project().constant_values(), [0.01, 0.2, 0.1])
    assert b.variable == (True, False, True)
    assert np.allclose(b.variable_vector(), [0.5, 0.1])
    assert np.allclose(b.with_variables([0.3, 0.4]).constant_values(), [0.3, 0.2, 0.4])
    with pytest.raises(ValueError):
        ParameterVector.constant(0.1, 0.1, 0.1, fixed=("beta", "gamma", "mort"))
    with pytest.raises(ValueError):
        ParameterVector.constant(0.1, 0.1, 0.1, lower=(0.5, 0, 0), upper=(0.4, 1, 1))


def test_time_dependent_projection_nodewise():
    grid = chebyshev_grid(5, 1.0)
    a = ParameterVector.time_dependent(grid, np.linspace(-1, 2, 7), 0.3, 0.2)
    p = a.project()
    assert p.values[0].min() == 0.0 and p.values[0].max() == 1.0
    assert p.is_feasible() and not a.is_feasible()
    assert p.variable_vector().size == 21


def test_r0_and_sensitivity():
    assert basic_reproduction_number((0.03, 0.6, 0), 200) == 10.0
    assert basic_reproduction_number((0.0, 0.6, 0.1), 200) == 0.0
    assert basic_reproduction_number((0.07, 0.1, 0.05), 400) == pytest.approx(560 / 3)
    assert np.array_equal(sensitivity_indices((0.03, 0.6, 0)), [1, -1, 0])
    assert np.allclose(sensitivity_indices((0.07, 0.1, 0.05)), [1, -2 / 3, -1 / 3],
                       rtol=0, atol=1e-16)
    assert np.array_equal(sensitivity_indices((0.2, 0.3, 0.3)), [1, -0.5, -0.5])
    with pytest.raises(ValueError):
        basic_reproduction_number((0.1, 0, 0), 10)
    with pytest.raises(ValueError):
        sensitivity_indices((0.1, 0, 0))


def test_adjoint_vanishes_for_exact_fit():
    alpha = ParameterVector.constant(0.03, 0.6, 0.0)
    state = solve_state(alpha, [199, 1, 0], 10.0)
    target = Target(state.interpolant())
    adj = solve_adjoint(state, alpha, state.rho, target)
    assert np.array_equal(adj.q, np.zeros_like(adj.q))
    assert np.array_equal(adj.multiplier, adj.q[0])


def test_adjoint_terminal_condition():
    alpha = ParameterVector.constant(0.03, 0.6, 0.0)
    state = solve_state(alpha, [199, 1, 0], 10.0)
    tgt = state.rho.copy()
    tgt[-1] -= [0.1, 0.0, 0.0]
    adj = solve_adjoint(state, alpha, tgt, None, terminal_weights=np.ones(3))
    assert np.allclose(adj.q_terminal, [0.1, 0, 0]) and np.allclose(adj.q[-1], [0.1, 0, 0])


def test_adjoint_against_reference():
    alpha = ParameterVector.constant(0.03, 0.6, 0.0)
    grid = chebyshev_grid(200, 10.0)
    state = solve_state(alpha, [199, 1, 0], grid=grid, rel_tol=1e-11, abs_tol=1e-12)
    target = Target(solve_state(ParameterVector.constant(0.02, 0.5, 0), [199, 1, 0],
                                grid=grid, rel_tol=1e-11, abs_tol=1e-12).interpolant())
    adj = solve_adjoint(state, alpha, target.on_grid(grid), target, rel_tol=1e-11, abs_tol=1e-12)
    rho = state.interpolant()

    def rhs(t, q):
        r = rho(t)
        return adjoint_rhs(q, r, (0.03, 0.6, 0.0), r - target(t))

    ref = solve_ivp(rhs, (10, 0), np.zeros(3), t_eval=grid.nodes[::-1], method="DOP853",
                    rtol=1e-12, atol=1e-12).y.T[::-1]
    assert np.allclose(adj.q, ref, rtol=1e-6, atol=1e-6 * np.abs(ref).max())


def test_adjoint_bound_holds():
    alpha_c = (0.03, 0.6, 0.0)
    alpha = ParameterVector.constant(*alpha_c)
    state = solve_state(alpha, [199, 1, 0], 2.0)
    target = Target(solve_state(ParameterVector.constant(0.01, 0.3, 0), [199, 1, 0],
                                grid=state.grid).interpolant())
    tv = target.on_grid(state.grid)
    adj = solve_adjoint(state, alpha, tv, target)
    src = np.abs(state.rho - tv).max(axis=1)
    bound = adjoint_bound(state, alpha_c, src)
    assert np.all(np.abs(adj.q).max(axis=1) <= bound * (1 + 1e-9) + 1e-12)
