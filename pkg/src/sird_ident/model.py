"""SIRD dynamics, forward and adjoint solves, and R0 diagnostics."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np

from .discretization import HERMITE, Interpolant, TimeGrid, chebyshev_grid
from .ode import IvpProblem, SolutionPath, integrate, sample

__all__ = [
    "PARAMETER_NAMES",
    "ParameterVector",
    "StateTrajectory",
    "AdjointTrajectory",
    "InvariantViolation",
    "state_rhs",
    "state_jacobian",
    "adjoint_rhs",
    "solve_state",
    "solve_adjoint",
    "basic_reproduction_number",
    "sensitivity_indices",
    "adjoint_bound",
]

log = logging.getLogger(__name__)

PARAMETER_NAMES = ("beta", "gamma", "mort")


class InvariantViolation(RuntimeError):
    """A state trajectory left the positively invariant region."""


@dataclass(frozen=True, eq=False)
class ParameterVector:
    """The ``(beta, gamma, mort)`` triple with its variable/fixed partition.

    Each entry is either a float (constant in time) or an array of nodal
    values of a piecewise-linear function on ``nodes``.
    """

    values: tuple
    variable: tuple[bool, bool, bool] = (True, True, True)
    lower: np.ndarray = field(default_factory=lambda: np.zeros(3))
    upper: np.ndarray = field(default_factory=lambda: np.ones(3))
    nodes: np.ndarray | None = None

    def __post_init__(self):
        if len(self.values) != 3 or len(self.variable) != 3:
            raise ValueError("a parameter vector has exactly three entries")
        vals = []
        for v in self.values:
            if np.ndim(v) == 0:
                vals.append(float(v))
            else:
                arr = np.array(v, dtype=float)
                if self.nodes is None or arr.shape != (len(self.nodes),):
                    raise ValueError("time-dependent entries need one value per node")
                arr.setflags(write=False)
                vals.append(arr)
        lower = np.asarray(self.lower, dtype=float).reshape(3)
        upper = np.asarray(self.upper, dtype=float).reshape(3)
        if np.any(lower < 0) or np.any(lower >= upper):
            raise ValueError("bounds must satisfy 0 <= lower < upper")
        if not any(self.variable):
            raise ValueError("at least one parameter must be variable")
        object.__setattr__(self, "values", tuple(vals))
        object.__setattr__(self, "variable", tuple(bool(b) for b in self.variable))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if self.nodes is not None:
            object.__setattr__(self, "nodes", np.asarray(self.nodes, dtype=float))

    # construction -------------------------------------------------------
    @classmethod
    def constant(
        cls,
        beta: float,
        gamma: float,
        mort: float,
        fixed: Sequence[str] = (),
        upper=(1.0, 1.0, 1.0),
        lower=(0.0, 0.0, 0.0),
    ) -> "ParameterVector":
        variable = tuple(name not in fixed for name in PARAMETER_NAMES)
        return cls((beta, gamma, mort), variable, np.array(lower), np.array(upper))

    @classmethod
    def time_dependent(
        cls,
        nodes,
        beta,
        gamma,
        mort,
        fixed: Sequence[str] = (),
        upper=(1.0, 1.0, 1.0),
        lower=(0.0, 0.0, 0.0),
    ) -> "ParameterVector":
        """Piecewise-linear entries on ``nodes``; scalars are broadcast."""
        nodes = np.asarray(getattr(nodes, "nodes", nodes), dtype=float)
        vals = tuple(
            np.full(nodes.size, float(v)) if np.ndim(v) == 0 else np.asarray(v, float)
            for v in (beta, gamma, mort)
        )
        variable = tuple(name not in fixed for name in PARAMETER_NAMES)
        return cls(vals, variable, np.array(lower), np.array(upper), nodes)

    # queries ------------------------------------------------------------
    @property
    def is_time_dependent(self) -> tuple[bool, bool, bool]:
        return tuple(isinstance(v, np.ndarray) for v in self.values)

    @property
    def n_variable(self) -> int:
        """Number of variable parameters ``s_v``."""
        return sum(self.variable)

    def at(self, t: float) -> np.ndarray:
        """Values of ``(beta, gamma, mort)`` at time ``t``."""
        return np.array(
            [
                np.interp(t, self.nodes, v) if isinstance(v, np.ndarray) else v
                for v in self.values
            ]
        )

    def on_grid(self, grid) -> np.ndarray:
        """Array of shape ``(len(grid), 3)`` with the parameter values."""
        t = np.asarray(getattr(grid, "nodes", grid), dtype=float)
        cols = []
        for v in self.values:
            if isinstance(v, np.ndarray):
                if self.nodes.size == t.size and np.array_equal(self.nodes, t):
                    cols.append(v)
                else:
                    cols.append(np.interp(t, self.nodes, v))
            else:
                cols.append(np.full(t.size, v))
        return np.stack(cols, axis=1)

    def constant_values(self) -> np.ndarray:
        if any(self.is_time_dependent):
            raise ValueError("parameter vector is time dependent")
        return np.array(self.values)

    # flattening of the variable part -------------------------------------
    def _sizes(self) -> list[int]:
        return [
            (v.size if isinstance(v, np.ndarray) else 1) if var else 0
            for v, var in zip(self.values, self.variable)
        ]

    def variable_vector(self) -> np.ndarray:
        parts = [
            np.atleast_1d(v) for v, var in zip(self.values, self.variable) if var
        ]
        return np.concatenate(parts).astype(float)

    def variable_bounds(self) -> tuple[np.ndarray, np.ndarray]:
        sizes = self._sizes()
        lo = np.concatenate([np.full(n, self.lower[i]) for i, n in enumerate(sizes)])
        hi = np.concatenate([np.full(n, self.upper[i]) for i, n in enumerate(sizes)])
        return lo, hi

    def variable_owner(self) -> np.ndarray:
        """Index (0, 1, 2) of the parameter owning each flat variable entry."""
        return np.concatenate(
            [np.full(n, i, dtype=int) for i, n in enumerate(self._sizes())]
        )

    def with_variables(self, x) -> "ParameterVector":
        x = np.asarray(x, dtype=float)
        vals = list(self.values)
        pos = 0
        for i, n in enumerate(self._sizes()):
            if n == 0:
                continue
            chunk = x[pos : pos + n]
            vals[i] = chunk.copy() if isinstance(vals[i], np.ndarray) else float(chunk[0])
            pos += n
        if pos != x.size:
            raise ValueError(f"expected {pos} variable entries, got {x.size}")
        return replace(self, values=tuple(vals))

    def project(self) -> "ParameterVector":
        """Clip every variable entry (node-wise if time dependent) to its bounds."""
        vals = list(self.values)
        for i, var in enumerate(self.variable):
            if var:
                clipped = np.clip(vals[i], self.lower[i], self.upper[i])
                vals[i] = clipped if isinstance(vals[i], np.ndarray) else float(clipped)
        return replace(self, values=tuple(vals))

    def is_feasible(self) -> bool:
        for v, lo, hi in zip(self.values, self.lower, self.upper):
            if np.any(np.asarray(v) < lo) or np.any(np.asarray(v) > hi):
                return False
        return True

    def as_dict(self) -> dict:
        return {
            name: (v.tolist() if isinstance(v, np.ndarray) else v)
            for name, v in zip(PARAMETER_NAMES, self.values)
        }


# --------------------------------------------------------------------------
# pointwise dynamics


def state_rhs(rho, alpha_t) -> np.ndarray:
    """SIRD right-hand side at one time for parameter values ``alpha_t``."""
    s, i, _ = rho
    beta, gamma, mort = alpha_t
    infection = beta * s * i
    return np.array([-infection, infection - (gamma + mort) * i, gamma * i])


def state_jacobian(rho, alpha_t) -> np.ndarray:
    """Jacobian of :func:`state_rhs` with respect to the state."""
    s, i, _ = rho
    beta, gamma, mort = alpha_t
    return np.array(
        [
            [-beta * i, -beta * s, 0.0],
            [beta * i, beta * s - gamma - mort, 0.0],
            [0.0, gamma, 0.0],
        ]
    )


def adjoint_rhs(q, rho_t, alpha_t, drdrho_t) -> np.ndarray:
    """Time derivative of the adjoint, ``-(df/drho)^T q - dr/drho``."""
    qs, qi, qr = q
    s, i, _ = rho_t
    beta, gamma, mort = alpha_t
    ds, di, dr = drdrho_t
    return np.array(
        [
            beta * i * (qs - qi) - ds,
            beta * s * (qs - qi) + gamma * (qi - qr) + mort * qi - di,
            -dr,
        ]
    )


# --------------------------------------------------------------------------
# trajectories


@dataclass(frozen=True, eq=False)
class StateTrajectory:
    grid: TimeGrid
    rho: np.ndarray
    rho_dot: np.ndarray
    population: float
    rho0: np.ndarray
    path: SolutionPath | None = None

    @property
    def T(self) -> float:
        return self.grid.T

    def interpolant(self) -> Interpolant:
        return Interpolant(self.grid.nodes, self.rho, HERMITE, self.rho_dot)

    def __call__(self, t):
        return self.interpolant()(t)


@dataclass(frozen=True, eq=False)
class AdjointTrajectory:
    grid: TimeGrid
    q: np.ndarray
    q_terminal: np.ndarray
    path: SolutionPath | None = None

    @property
    def multiplier(self) -> np.ndarray:
        """Lagrange multiplier of the initial condition, ``p = q(0)``."""
        return self.q[0].copy()


def _alpha_function(alpha: ParameterVector):
    td = alpha.is_time_dependent
    if not any(td):
        const = np.array(alpha.values)
        return lambda t: const
    nodes = alpha.nodes
    table = alpha.on_grid(nodes)
    last = nodes.size - 2

    def at(t):
        k = int(np.searchsorted(nodes, t, side="right")) - 1
        k = 0 if k < 0 else (last if k > last else k)
        s = (t - nodes[k]) / (nodes[k + 1] - nodes[k])
        s = 0.0 if s < 0.0 else (1.0 if s > 1.0 else s)
        return (1.0 - s) * table[k] + s * table[k + 1]

    return at


def _make_state_rhs(alpha: ParameterVector):
    if not any(alpha.is_time_dependent):
        beta, gamma, mort = alpha.values
        gm = gamma + mort

        def rhs(t, y):
            s, i, _ = y
            inf = beta * s * i
            return np.array([-inf, inf - gm * i, gamma * i])

        return rhs

    alpha_at = _alpha_function(alpha)

    def rhs(t, y):
        beta, gamma, mort = alpha_at(t)
        s, i, _ = y
        inf = beta * s * i
        return np.array([-inf, inf - (gamma + mort) * i, gamma * i])

    return rhs


def _check_invariants(rho: np.ndarray, n: float, tol: float) -> None:
    total = rho.sum(axis=1)
    worst = max(
        -rho.min(),
        total.max() - n,
        np.max(np.diff(total)) if total.size > 1 else 0.0,
    )
    if worst <= tol:
        return
    msg = f"state left the invariant region by {worst:.3g} (tolerance {tol:.3g})"
    if worst <= 10 * tol:
        warnings.warn(msg, RuntimeWarning, stacklevel=3)
        return
    raise InvariantViolation(msg + "; tighten the integrator tolerances")


def solve_state(
    alpha: ParameterVector,
    rho0,
    T: float | None = None,
    grid_size: int = 200,
    *,
    grid: TimeGrid | None = None,
    rel_tol: float = 1e-3,
    abs_tol: float = 1e-6,
    tol_inv: float | None = None,
    validate: bool = True,
) -> StateTrajectory:
    """Integrate the SIRD system and sample it on a Chebyshev grid.

    ``grid`` overrides ``T``/``grid_size``. ``tol_inv`` defaults to
    ``1e-6 * n``.
    """
    rho0 = np.asarray(rho0, dtype=float)
    if np.any(rho0 < 0):
        raise ValueError("initial state must be non-negative")
    if grid is None:
        if T is None or T <= 0:
            raise ValueError("horizon T must be positive")
        grid = chebyshev_grid(grid_size, T)
    n = float(rho0.sum())
    rhs = _make_state_rhs(alpha)
    path = integrate(IvpProblem(rhs, rho0, (0.0, grid.T), rel_tol, abs_tol))
    rho = sample(path, grid.nodes)
    rho[0] = rho0
    alpha_grid = alpha.on_grid(grid)
    s, i = rho[:, 0], rho[:, 1]
    inf = alpha_grid[:, 0] * s * i
    rho_dot = np.stack(
        [-inf, inf - (alpha_grid[:, 1] + alpha_grid[:, 2]) * i, alpha_grid[:, 1] * i],
        axis=1,
    )
    if validate:
        _check_invariants(rho, n, 1e-6 * n if tol_inv is None else tol_inv)
    return StateTrajectory(grid, rho, rho_dot, n, rho0, path)


def solve_adjoint(
    state: StateTrajectory,
    alpha: ParameterVector,
    target_values,
    target=None,
    terminal_weights=None,
    *,
    rel_tol: float = 1e-3,
    abs_tol: float = 1e-6,
) -> AdjointTrajectory:
    """Solve the adjoint of the tracking cost backwards from ``T``.

    The adjoint source is ``rho(t) - target(t)``, with ``rho`` taken from the
    Hermite interpolant of ``state`` and ``target`` a callable (usually a
    :class:`~sird_ident.objective.Target` interpolant). ``target_values`` are
    the target's nodal values on ``state.grid``; they fix the terminal
    mismatch when ``terminal_weights`` is given, in which case
    ``q(T) = terminal_weights * (rho(T) - target(T))``.
    """
    grid = state.grid
    T = grid.T
    target_values = np.asarray(target_values, dtype=float)
    if terminal_weights is None:
        q_T = np.zeros(3)
    else:
        q_T = np.asarray(terminal_weights, float) * (state.rho[-1] - target_values[-1])

    nodes = grid.nodes
    rho_nodes = state.rho
    rho_dots = state.rho_dot
    last = nodes.size - 2
    alpha_at = _alpha_function(alpha)
    if target is None:
        target = Interpolant(nodes, target_values, mode="linear")
    target_itp = getattr(target, "at", target)

    def rho_at(t):
        k = int(np.searchsorted(nodes, t, side="right")) - 1
        k = 0 if k < 0 else (last if k > last else k)
        t0 = nodes[k]
        h = nodes[k + 1] - t0
        s = (t - t0) / h
        s2 = s * s
        s3 = s2 * s
        return (
            (2 * s3 - 3 * s2 + 1) * rho_nodes[k]
            + (s3 - 2 * s2 + s) * h * rho_dots[k]
            + (-2 * s3 + 3 * s2) * rho_nodes[k + 1]
            + (s3 - s2) * h * rho_dots[k + 1]
        )

    def rhs(tau, p):
        t = T - tau
        if t < 0.0:
            t = 0.0
        r = rho_at(t)
        s, i = r[0], r[1]
        beta, gamma, mort = alpha_at(t)
        src = r - target_itp(t)
        qs, qi, qr = p
        # d p / d tau = (df/drho)^T q + dr/drho
        return np.array(
            [
                -beta * i * (qs - qi) + src[0],
                -beta * s * (qs - qi) - gamma * (qi - qr) - mort * qi + src[1],
                src[2],
            ]
        )

    path = integrate(IvpProblem(rhs, q_T, (0.0, T), rel_tol, abs_tol))
    q = sample(path, T - nodes[::-1])[::-1]
    q[-1] = q_T
    return AdjointTrajectory(grid, q, q_T, path)


def adjoint_bound(state: StateTrajectory, alpha_const, source_norm) -> np.ndarray:
    """Gronwall-type bound on ``||q(t)||_inf`` for a zero terminal condition.

    ``source_norm`` holds ``||dr/drho||_inf`` at the grid nodes. Returns the
    bound at every node.
    """
    beta, gamma, mort = alpha_const
    n = state.population
    t = state.grid.nodes
    T = state.grid.T
    src = np.asarray(source_norm, dtype=float)
    # tail integrals int_t^T by trapezoid from the right, then Simpson total
    seg = 0.5 * (src[1:] + src[:-1]) * np.diff(t)
    tail = np.concatenate((np.cumsum(seg[::-1])[::-1], [0.0]))
    return np.exp((2 * n * beta + 2 * gamma + mort) * (T - t)) * tail


# --------------------------------------------------------------------------
# epidemiological diagnostics


def basic_reproduction_number(alpha_const, n: float) -> float:
    """``R0 = n beta / (gamma + m)``."""
    beta, gamma, mort = (float(a) for a in alpha_const)
    if gamma + mort <= 0:
        raise ValueError("R0 is undefined when gamma + m = 0")
    return n * beta / (gamma + mort)


def sensitivity_indices(alpha_const) -> np.ndarray:
    """Elasticities of R0 with respect to ``(beta, gamma, m)``."""
    _, gamma, mort = (float(a) for a in alpha_const)
    denom = gamma + mort
    if denom <= 0:
        raise ValueError("sensitivity indices are undefined when gamma + m = 0")
    return np.array([1.0, -gamma / denom, -mort / denom])
