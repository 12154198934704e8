"""Reduced cost, adjoint-based reduced gradient and stationarity checks."""

from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .discretization import HERMITE, Interpolant, TimeGrid, chebyshev_grid, simpson_integrate
from .model import (
    ParameterVector,
    StateTrajectory,
    AdjointTrajectory,
    solve_adjoint,
    solve_state,
)

__all__ = [
    "ObjectiveSpec",
    "Target",
    "Setup",
    "GradientVector",
    "StationarityReport",
    "ReducedProblem",
    "running_cost",
    "evaluate_reduced_cost",
    "reduced_gradient",
    "project",
    "check_stationarity",
]

INTEGRATED = "integrated"
LUMPED = "lumped"


@dataclass(frozen=True)
class ObjectiveSpec:
    """Which tracking objective to minimise.

    The reduced cost is::

        j = (int 1/2 |rho - target|^2 + R_int + H dt + 1/2 sum(v * e_T^2)) / scale
            + R_lumped

    with ``R = 1/2 sum_i w_i alpha_i^2`` over the variable parameters. With
    ``reg_mode="integrated"`` the regulariser sits inside the time integral
    (``R_int``); ``"lumped"`` adds it once, unscaled, outside the integral.
    ``H = penalty * max(0, gamma + m - 1)^2`` and ``e_T = rho(T) - target(T)``.
    """

    form: str = "r1"
    scale: float = 1.0
    reg_weights: np.ndarray | float = 0.0
    reg_mode: str = INTEGRATED
    terminal_weights: np.ndarray | None = None
    penalty: float = 0.0

    def __post_init__(self):
        w = np.broadcast_to(np.asarray(self.reg_weights, dtype=float), (3,)).copy()
        if np.any(w < 0):
            raise ValueError("regularisation weights must be non-negative")
        object.__setattr__(self, "reg_weights", w)
        if self.terminal_weights is not None:
            v = np.broadcast_to(np.asarray(self.terminal_weights, float), (3,)).copy()
            if np.any(v < 0):
                raise ValueError("terminal weights must be non-negative")
            object.__setattr__(self, "terminal_weights", v)
        if self.penalty < 0:
            raise ValueError("penalty strength must be non-negative")
        if self.scale <= 0:
            raise ValueError("scale must be positive")
        if self.reg_mode not in (INTEGRATED, LUMPED):
            raise ValueError(f"unknown regularisation mode {self.reg_mode!r}")

    @classmethod
    def r1(cls, scale: float = 1.0) -> "ObjectiveSpec":
        return cls("r1", scale)

    @classmethod
    def r2(cls, theta, scale: float = 1.0, reg_mode: str = INTEGRATED) -> "ObjectiveSpec":
        """Tikhonov term ``theta/2 |alpha_v|^2``."""
        return cls("r2", scale, theta, reg_mode)

    @classmethod
    def r3(cls, theta, terminal, scale: float = 1.0, T: float | None = None,
           reg_mode: str = INTEGRATED) -> "ObjectiveSpec":
        """Regularised tracking plus a terminal term ``1/2 |terminal * e_T|^2``.

        Passing ``T`` switches to the alternative normalisation
        ``terminal / (2T) |e_T|^2`` with a scalar ``terminal``.
        """
        terminal = np.broadcast_to(np.asarray(terminal, float), (3,))
        weights = terminal / T if T is not None else terminal**2
        return cls("r3", scale, theta, reg_mode, weights)

    @classmethod
    def data_driven(cls, theta_sq, terminal_sq, penalty: float,
                    scale: float = 1.0) -> "ObjectiveSpec":
        """``1/2 |theta * alpha(t)|^2`` and ``H`` under the integral, terminal
        weights ``terminal_sq`` on the final mismatch."""
        return cls("data", scale, theta_sq, INTEGRATED, terminal_sq, penalty)

    def to_dict(self) -> dict:
        return {
            "form": self.form,
            "scale": self.scale,
            "reg_weights": self.reg_weights.tolist(),
            "reg_mode": self.reg_mode,
            "terminal_weights": None
            if self.terminal_weights is None
            else self.terminal_weights.tolist(),
            "penalty": self.penalty,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ObjectiveSpec":
        return cls(**data)


@dataclass(frozen=True, eq=False)
class Target:
    """Reference trajectory defined on the whole horizon."""

    itp: Interpolant
    provenance: str = "synthetic"
    _cache: dict = field(default_factory=dict, repr=False)

    @property
    def T(self) -> float:
        return self.itp.t_end

    def __call__(self, t):
        return self.itp(t)

    def at(self, t: float) -> np.ndarray:
        return self.itp.at(t)

    def on_grid(self, grid: TimeGrid) -> np.ndarray:
        key = id(grid)
        hit = self._cache.get(key)
        if hit is None or hit[0] is not grid:
            hit = (grid, np.asarray(self.itp(grid.nodes)))
            self._cache[key] = hit
        return hit[1]


@dataclass(frozen=True, eq=False)
class Setup:
    """Forward-problem data shared by every evaluation."""

    rho0: np.ndarray
    grid: TimeGrid
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    tol_inv: float | None = None

    @classmethod
    def chebyshev(cls, rho0, T: float, n_interior: int = 200, **kw) -> "Setup":
        return cls(np.asarray(rho0, dtype=float), chebyshev_grid(n_interior, T), **kw)

    @property
    def T(self) -> float:
        return self.grid.T

    @property
    def population(self) -> float:
        return float(np.sum(self.rho0))


def _penalty(gm: np.ndarray | float, strength: float):
    excess = np.maximum(0.0, np.asarray(gm) - 1.0)
    return strength * excess**2


def running_cost(rho_t, alpha_t, target_t, spec: ObjectiveSpec,
                 variable=(True, True, True)) -> float:
    """Integrand of the reduced cost at one time (before scaling).

    Includes the regulariser only for ``reg_mode="integrated"``.
    """
    diff = np.asarray(rho_t, float) - np.asarray(target_t, float)
    value = 0.5 * float(diff @ diff)
    alpha_t = np.asarray(alpha_t, float)
    if spec.reg_mode == INTEGRATED:
        mask = np.asarray(variable, bool)
        value += 0.5 * float(np.sum(spec.reg_weights[mask] * alpha_t[mask] ** 2))
    if spec.penalty:
        value += float(_penalty(alpha_t[1] + alpha_t[2], spec.penalty))
    return value


def _solve(alpha: ParameterVector, setup: Setup, validate: bool = True) -> StateTrajectory:
    return solve_state(
        alpha,
        setup.rho0,
        grid=setup.grid,
        rel_tol=setup.rel_tol,
        abs_tol=setup.abs_tol,
        tol_inv=setup.tol_inv,
        validate=validate,
    )


_GL_X, _GL_W = np.polynomial.legendre.leggauss(4)


def _tracking_across_breaks(state: StateTrajectory, target: Target) -> float:
    """``int 1/2 |rho - target|^2`` for a target with kinks or jumps.

    Simpson on the grid nodes has an O(h) error at every jump of the target,
    which the exact adjoint gradient does not see. Splitting at the union of
    grid nodes and target breakpoints and using 4-point Gauss-Legendre per
    piece integrates the Hermite state against a piecewise linear or
    constant target exactly.
    """
    breaks = np.union1d(state.grid.nodes, target.itp.nodes)
    mid = 0.5 * (breaks[:-1] + breaks[1:])
    half = 0.5 * np.diff(breaks)
    pts = (mid[:, None] + half[:, None] * _GL_X).ravel()
    diff = state.interpolant()(pts) - target(pts)
    per_piece = (0.5 * np.einsum("ij,ij->i", diff, diff)).reshape(-1, _GL_X.size) @ _GL_W
    return float(per_piece @ half)


def _cost_from_state(state: StateTrajectory, alpha: ParameterVector,
                     target: Target, spec: ObjectiveSpec) -> float:
    grid = state.grid
    tgt = target.on_grid(grid)
    diff = state.rho - tgt
    smooth = target.itp.mode == HERMITE
    integrand = 0.5 * np.einsum("ij,ij->i", diff, diff) if smooth else np.zeros(grid.size)
    a = alpha.on_grid(grid)
    mask = np.array(alpha.variable)
    reg = 0.5 * (a[:, mask] ** 2) @ spec.reg_weights[mask]
    lumped = 0.0
    if spec.reg_mode == INTEGRATED or any(alpha.is_time_dependent):
        integrand = integrand + reg
    else:
        lumped = float(reg[0])
    if spec.penalty:
        integrand = integrand + _penalty(a[:, 1] + a[:, 2], spec.penalty)
    total = float(simpson_integrate(grid, integrand))
    if not smooth:
        total += _tracking_across_breaks(state, target)
    if spec.terminal_weights is not None:
        total += 0.5 * float(spec.terminal_weights @ diff[-1] ** 2)
    return total / spec.scale + lumped


def evaluate_reduced_cost(alpha: ParameterVector, target: Target,
                          spec: ObjectiveSpec, setup: Setup) -> float:
    """``j(alpha)``: one state solve followed by quadrature of the running cost."""
    return _cost_from_state(_solve(alpha, setup, alpha.is_feasible()), alpha, target, spec)


@dataclass(frozen=True, eq=False)
class GradientVector:
    """Reduced gradient laid out like a :class:`ParameterVector`.

    Time-dependent entries hold the pointwise (L2-representative) gradient
    at the grid nodes. Fixed entries are zero.
    """

    entries: tuple
    variable: tuple[bool, bool, bool]

    def flat(self) -> np.ndarray:
        return np.concatenate(
            [np.atleast_1d(e) for e, v in zip(self.entries, self.variable) if v]
        )

    def norm_r(self) -> float:
        """Normalised norm ``s_v^{-1/2} |g|_2`` (constant parameters)."""
        return float(np.linalg.norm(self.flat()) / np.sqrt(sum(self.variable)))


def _gradient_from(state: StateTrajectory, adjoint: AdjointTrajectory,
                   alpha: ParameterVector, spec: ObjectiveSpec) -> GradientVector:
    grid = state.grid
    s, i = state.rho[:, 0], state.rho[:, 1]
    q = adjoint.q
    a = alpha.on_grid(grid)
    sens = np.stack(
        [s * i * (q[:, 1] - q[:, 0]), i * (q[:, 2] - q[:, 1]), -i * q[:, 1]], axis=1
    )
    if spec.penalty:
        dpen = 2.0 * spec.penalty * np.maximum(0.0, a[:, 1] + a[:, 2] - 1.0)
        sens[:, 1] += dpen
        sens[:, 2] += dpen
    td = alpha.is_time_dependent
    integrated = spec.reg_mode == INTEGRATED or any(td)
    entries = []
    for k in range(3):
        if not alpha.variable[k]:
            entries.append(np.zeros(grid.size) if td[k] else 0.0)
            continue
        w = spec.reg_weights[k]
        if td[k]:
            entries.append((sens[:, k] + w * a[:, k]) / spec.scale)
        else:
            g = float(simpson_integrate(grid, sens[:, k])) / spec.scale
            if integrated:
                g += grid.T * w * a[0, k] / spec.scale
            else:
                g += w * a[0, k]
            entries.append(g)
    return GradientVector(tuple(entries), alpha.variable)


def _adjoint(state, alpha, target, spec, setup) -> AdjointTrajectory:
    return solve_adjoint(
        state,
        alpha,
        target.on_grid(state.grid),
        target,
        spec.terminal_weights,
        rel_tol=setup.rel_tol,
        abs_tol=setup.abs_tol,
    )


def reduced_gradient(alpha: ParameterVector, target: Target,
                     spec: ObjectiveSpec, setup: Setup) -> GradientVector:
    """Adjoint-based gradient of :func:`evaluate_reduced_cost`."""
    state = _solve(alpha, setup, alpha.is_feasible())
    return _gradient_from(state, _adjoint(state, alpha, target, spec, setup), alpha, spec)


def project(alpha: ParameterVector) -> ParameterVector:
    """Coordinate-wise projection onto the parameter box."""
    return alpha.project()


@dataclass
class StationarityReport:
    """Sign conditions of the gradient at a candidate point."""

    passed: bool
    n_checked: int
    n_violations: int
    violations: list = field(default_factory=list)

    @property
    def fraction_ok(self) -> float:
        return 1.0 - self.n_violations / self.n_checked if self.n_checked else 1.0

    def to_dict(self) -> dict:
        return {
            "passed": self.passed,
            "n_checked": self.n_checked,
            "n_violations": self.n_violations,
            "fraction_ok": self.fraction_ok,
            "violations": self.violations[:50],
        }


def check_stationarity(alpha, grad, tol: float, lower=None, upper=None,
                       bound_tol: float = 1e-12) -> StationarityReport:
    """Check the box-constrained first-order conditions coordinate by coordinate.

    Interior coordinates need ``|g_i| <= tol``; coordinates at the lower bound
    need ``g_i >= -tol`` and at the upper bound ``g_i <= tol``. ``alpha`` and
    ``grad`` are either a :class:`ParameterVector` / :class:`GradientVector`
    pair or flat arrays with explicit ``lower`` / ``upper``.
    """
    if isinstance(alpha, ParameterVector):
        lower, upper = alpha.variable_bounds()
        alpha = alpha.variable_vector()
    if isinstance(grad, GradientVector):
        grad = grad.flat()
    x = np.asarray(alpha, float)
    g = np.asarray(grad, float)
    lo = np.broadcast_to(np.asarray(lower, float), x.shape)
    hi = np.broadcast_to(np.asarray(upper, float), x.shape)
    at_lo = x <= lo + bound_tol
    at_hi = x >= hi - bound_tol
    bad_lo = at_lo & (g < -tol)
    bad_hi = at_hi & (g > tol)
    bad_int = ~at_lo & ~at_hi & (np.abs(g) > tol)
    bad = bad_lo | bad_hi | bad_int
    violations = [
        {
            "index": int(k),
            "where": "lower" if at_lo[k] else "upper" if at_hi[k] else "interior",
            "grad": float(g[k]),
        }
        for k in np.flatnonzero(bad)
    ]
    return StationarityReport(not bad.any(), x.size, int(bad.sum()), violations)


class ReducedProblem:
    """Flat-vector view of ``j`` over the variable parameters.

    ``metric`` holds the weights of the inner product the optimisers should
    use: ones for constant parameters, Simpson weights for the nodal values
    of time-dependent ones (so the pointwise gradient is the gradient).
    """

    def __init__(self, alpha0: ParameterVector, target: Target,
                 spec: ObjectiveSpec, setup: Setup, cache_size: int = 8):
        if any(alpha0.is_time_dependent) and not np.array_equal(
            alpha0.nodes, setup.grid.nodes
        ):
            raise ValueError("time-dependent parameters must live on the setup grid")
        self.template = alpha0
        self.target = target
        self.spec = spec
        self.setup = setup
        self.x0 = alpha0.variable_vector()
        self.lower, self.upper = alpha0.variable_bounds()
        owner = alpha0.variable_owner()
        td = np.array(alpha0.is_time_dependent)
        w = setup.grid.weights
        metric = np.ones(self.x0.size)
        pos = 0
        for k in range(3):
            if not alpha0.variable[k]:
                continue
            n = int(np.sum(owner == k))
            if td[k]:
                metric[pos : pos + n] = w
            pos += n
        self.metric = metric
        self.owner = owner
        self.n_variable = alpha0.n_variable
        self.n_value = 0
        self.n_gradient = 0
        self._cache: OrderedDict = OrderedDict()
        self._cache_size = cache_size

    def alpha(self, x) -> ParameterVector:
        return self.template.with_variables(x)

    def project(self, x) -> np.ndarray:
        return np.clip(x, self.lower, self.upper)

    def _entry(self, x) -> dict:
        key = np.asarray(x, float).tobytes()
        entry = self._cache.get(key)
        if entry is None:
            alpha = self.alpha(x)
            feasible = bool(np.all(x >= self.lower) and np.all(x <= self.upper))
            state = _solve(alpha, self.setup, validate=feasible)
            entry = {"alpha": alpha, "state": state}
            self._cache[key] = entry
            if len(self._cache) > self._cache_size:
                self._cache.popitem(last=False)
        else:
            self._cache.move_to_end(key)
        return entry

    def value(self, x) -> float:
        entry = self._entry(x)
        if "value" not in entry:
            self.n_value += 1
            entry["value"] = _cost_from_state(
                entry["state"], entry["alpha"], self.target, self.spec
            )
        return entry["value"]

    def gradient_vector(self, x) -> GradientVector:
        entry = self._entry(x)
        if "grad" not in entry:
            self.n_gradient += 1
            adj = _adjoint(entry["state"], entry["alpha"], self.target, self.spec,
                           self.setup)
            entry["grad"] = _gradient_from(entry["state"], adj, entry["alpha"], self.spec)
        return entry["grad"]

    def gradient(self, x) -> np.ndarray:
        return self.gradient_vector(x).flat()

    def state(self, x) -> StateTrajectory:
        return self._entry(x)["state"]

    def grad_norm_r(self, g) -> float:
        """``s_v^{-1/2}`` times the metric norm of ``g``."""
        g = np.asarray(g, float)
        return float(np.sqrt(np.sum(self.metric * g * g) / self.n_variable))
