import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad

from sird_ident.discretization import (
    HERMITE,
    LINEAR,
    PIECEWISE_CONSTANT,
    Interpolant,
    TimeGrid,
    chebyshev_grid,
    interpolate,
    rolling_average,
    simpson_integrate,
    simpson_weights,
    uniform_grid,
)


def test_chebyshev_small_cases():
    g = chebyshev_grid(2, 2.0)
    assert np.allclose(g.nodes, [0, 1 - np.sqrt(2) / 2, 1 + np.sqrt(2) / 2, 2], atol=1e-15)
    assert np.array_equal(chebyshev_grid(1, 1.0).nodes, [0.0, 0.5, 1.0])


def test_experiment_grid_and_formula():
    g = chebyshev_grid(200, 10.0)
    assert g.size == 202 and g.nodes[0] == 0.0 and g.nodes[-1] == 10.0
    i = np.arange(200)
    raw = 5.0 * (1 + np.cos((2 * i + 1) * np.pi / 400))
    assert np.allclose(g.nodes[1:-1], np.sort(raw), rtol=0, atol=1e-14)


@pytest.mark.parametrize("n", [1, 2, 7, 200])
def test_chebyshev_symmetry(n):
    g = chebyshev_grid(n, 3.0)
    inner = g.nodes[1:-1]
    assert np.allclose(inner + inner[::-1], 3.0, atol=1e-14)


def test_chebyshev_rejects_bad_input():
    with pytest.raises(ValueError):
        chebyshev_grid(0, 1.0)
    with pytest.raises(ValueError):
        chebyshev_grid(3, 0.0)
    with pytest.raises(ValueError):
        TimeGrid(np.array([0.0, 1.0, 1.0]))


def test_simpson_basic_cases():
    g = chebyshev_grid(11, 4.0)
    assert simpson_integrate(g, np.ones(g.size)) == pytest.approx(4.0, abs=1e-14)
    u = TimeGrid(np.array([0.0, 0.5, 1.0]))
    assert simpson_integrate(u, u.nodes**2) == pytest.approx(1 / 3, abs=1e-16)
    g = chebyshev_grid(200, 1.0)
    assert simpson_integrate(g, np.sin(np.pi * g.nodes)) == pytest.approx(2 / np.pi, abs=1e-8)


def test_simpson_needs_three_nodes():
    with pytest.raises(ValueError):
        simpson_weights([0.0, 1.0])


def test_simpson_uniform_is_classical():
    g = uniform_grid(6, 3.0)
    w = simpson_weights(g.nodes)
    h = 0.5
    assert np.allclose(w, h / 3 * np.array([1, 4, 2, 4, 2, 4, 1]))
    odd = simpson_weights(uniform_grid(3, 3.0).nodes)
    # two intervals by Simpson, the last by trapezoid
    assert np.allclose(odd, [1 / 3, 4 / 3, 1 / 3 + 0.5, 0.5])


def test_simpson_exact_on_quadratics_nonuniform():
    # every interval pair has length ratio within [1/2, 2]
    nodes = np.array([0.0, 0.1, 0.25, 0.4, 0.5, 0.7, 0.9])
    f = 3 * nodes**2 - nodes + 2
    assert simpson_integrate(TimeGrid(nodes), f) == pytest.approx(0.9 ** 3 - 0.405 + 1.8, abs=1e-14)


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(0.0, 1e3), min_size=12, max_size=12), st.integers(3, 100))
def test_simpson_positivity(values, n):
    g = chebyshev_grid(10, 1.0 + n / 10)
    v = np.array(values)
    assert simpson_integrate(g, v) >= -1e-14 * g.T * max(v.max(), 1.0)
    assert np.all(g.weights >= 0)


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 300), st.floats(0.1, 50.0))
def test_simpson_weights_sum_to_length(n, T):
    g = chebyshev_grid(n, T)
    assert g.weights.sum() == pytest.approx(T, rel=1e-12)


def test_simpson_linearity(rng):
    g = chebyshev_grid(30, 2.0)
    a, b = rng.normal(size=(2, g.size))
    assert simpson_integrate(g, 2 * a - 3 * b) == pytest.approx(
        2 * simpson_integrate(g, a) - 3 * simpson_integrate(g, b), abs=1e-12)


def test_hermite_cubic_exactness():
    g = chebyshev_grid(5, 2.0)
    itp = Interpolant(g.nodes, g.nodes**3, HERMITE, 3 * g.nodes**2)
    mids = 0.5 * (g.nodes[1:] + g.nodes[:-1])
    assert np.allclose(itp(mids)[:, 0], mids**3, atol=1e-14)
    assert np.allclose([itp.at(t)[0] for t in mids], mids**3, atol=1e-14)
    assert np.allclose(itp.integral(0.0, 2.0), 4.0, atol=1e-13)


def test_linear_affine_exactness():
    nodes = np.array([0.0, 0.3, 1.1, 2.0])
    itp = Interpolant(nodes, 2 * nodes + 1, LINEAR)
    t = np.linspace(0, 2, 41)
    assert np.allclose(interpolate(itp, t)[:, 0], 2 * t + 1, atol=1e-14)


def test_piecewise_constant_semantics():
    itp = Interpolant(np.array([0.0, 0.5, 1.0]), np.array([[1.0], [2.0]]), PIECEWISE_CONSTANT)
    assert itp(0.25)[0] == 1.0 and itp(0.75)[0] == 2.0 and itp(1.0)[0] == 2.0
    assert itp(0.5)[0] == 2.0  # right-continuous
    assert itp.at(1.0)[0] == 2.0


@pytest.mark.parametrize("mode", [LINEAR, HERMITE])
def test_nodes_reproduced(mode, rng):
    nodes = np.sort(rng.uniform(0, 5, 9))
    vals = rng.normal(size=(9, 3))
    itp = Interpolant(nodes, vals, mode, rng.normal(size=(9, 3)) if mode == HERMITE else None)
    assert np.array_equal(itp(nodes), vals)


def test_interpolant_domain_errors():
    itp = Interpolant(np.array([0.0, 1.0]), np.array([0.0, 1.0]), LINEAR)
    with pytest.raises(ValueError):
        itp(1.5)
    with pytest.raises(ValueError):
        Interpolant(np.array([0.0, 1.0]), np.array([0.0, 1.0]), HERMITE)
    with pytest.raises(ValueError):
        Interpolant(np.array([0.0, 1.0]), np.array([0.0, 1.0]), "spline")


def test_rolling_average_cases():
    const = rolling_average(lambda t: np.full((t.size, 2), 3.0), 4, 2.0)
    assert np.allclose(const.values, 3.0)
    ident = rolling_average(lambda t: t, 2, 1.0)
    assert np.allclose(ident.values[:, 0], [0.25, 0.75], atol=1e-15)
    lin = Interpolant(np.array([0.0, 1.0]), np.array([0.0, 1.0]), LINEAR)
    assert np.allclose(rolling_average(lin, 2).values[:, 0], [0.25, 0.75], atol=1e-15)
    exp = rolling_average(lambda t: np.stack([np.sin(t)] * 3, 1), 50, 3.0)
    assert exp.values.shape == (50, 3) and exp.mode == PIECEWISE_CONSTANT
    with pytest.raises(ValueError):
        rolling_average(lambda t: t, 0, 1.0)


def test_rolling_average_against_quad():
    f = lambda t: np.exp(-t) * np.cos(3 * t)
    avg = rolling_average(f, 5, 2.0)
    edges = np.linspace(0, 2, 6)
    for k, (a, b) in enumerate(zip(edges[:-1], edges[1:])):
        ref = quad(f, a, b, epsabs=1e-14)[0] / (b - a)
        assert avg.values[k, 0] == pytest.approx(ref, abs=1e-13)
