"""Adaptive Dormand-Prince 5(4) integration with Hermite sampling.

Only forward-in-time problems are handled. Backward problems (the adjoint)
are mapped to forward ones by the caller through ``tau = T - t``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np

__all__ = [
    "IntegrationError",
    "IvpProblem",
    "SolutionPath",
    "integrate",
    "sample",
    "hermite_eval",
]

# Dormand & Prince (1980) tableau, 5th-order weights propagated.
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    np.array([]),
    np.array([1 / 5]),
    np.array([3 / 40, 9 / 40]),
    np.array([44 / 45, -56 / 15, 32 / 9]),
    np.array([19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729]),
    np.array([9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656]),
    np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84]),
]
# difference between the 5th- and 4th-order weights (7 stages, FSAL)
_E = np.array(
    [
        71 / 57600,
        0.0,
        -71 / 16695,
        71 / 1920,
        -17253 / 339200,
        22 / 525,
        -1 / 40,
    ]
)

_SAFETY = 0.9
_MIN_FACTOR = 0.2
_MAX_FACTOR = 10.0
_ERR_EXP = -1.0 / 5.0


class IntegrationError(RuntimeError):
    """Raised when the integrator cannot reach the end of the time span.

    Attributes
    ----------
    t_reached : float
        Last time successfully reached.
    """

    def __init__(self, message: str, t_reached: float):
        super().__init__(f"{message} (reached t={t_reached:.6g})")
        self.t_reached = t_reached


@dataclass(frozen=True)
class IvpProblem:
    """Forward initial value problem ``y' = rhs(t, y)``, ``y(t0) = y0``."""

    rhs: Callable[[float, np.ndarray], np.ndarray]
    y0: np.ndarray
    t_span: tuple[float, float]
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6

    def __post_init__(self):
        t0, t1 = self.t_span
        if not t0 < t1:
            raise ValueError(f"t_span must be increasing, got {self.t_span}")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ValueError("tolerances must be positive")


@dataclass
class SolutionPath:
    """Accepted RK nodes with states and right-hand side values."""

    nodes: np.ndarray
    values: np.ndarray
    derivs: np.ndarray
    n_accepted: int = 0
    n_rejected: int = 0
    n_rhs: int = 0
    step_stats: dict = field(default_factory=dict)

    @property
    def t_start(self) -> float:
        return float(self.nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])


def _rms(x: np.ndarray) -> float:
    return float(np.sqrt(np.dot(x, x) / x.size))


def _initial_step(rhs, t0, y0, f0, direction_span, rtol, atol) -> float:
    # Hairer, Norsett & Wanner, Solving ODEs I, II.4.
    scale = atol + np.abs(y0) * rtol
    d0 = _rms(y0 / scale)
    d1 = _rms(f0 / scale)
    if d0 < 1e-5 or d1 < 1e-5:
        h0 = 1e-6
    else:
        h0 = 0.01 * d0 / d1
    h0 = min(h0, direction_span)
    y1 = y0 + h0 * f0
    f1 = np.asarray(rhs(t0 + h0, y1), dtype=float)
    d2 = _rms((f1 - f0) / scale) / h0
    if d1 <= 1e-15 and d2 <= 1e-15:
        h1 = max(1e-6, h0 * 1e-3)
    else:
        h1 = (0.01 / max(d1, d2)) ** (1 / 5)
    return min(100 * h0, h1, direction_span)


def integrate(problem: IvpProblem, max_steps: int = 1_000_000) -> SolutionPath:
    """Integrate ``problem`` over its whole span with the DP5(4) pair.

    The local error estimate of every accepted step satisfies
    ``rms(err / (abs_tol + rel_tol * max(|y_old|, |y_new|))) <= 1``.

    Raises
    ------
    IntegrationError
        On step-size underflow or a non-finite right-hand side.
    """
    rhs = problem.rhs
    rtol, atol = problem.rel_tol, problem.abs_tol
    t0, t_end = map(float, problem.t_span)
    y = np.array(problem.y0, dtype=float)
    if not np.all(np.isfinite(y)):
        raise IntegrationError("non-finite initial state", t0)
    f = np.asarray(rhs(t0, y), dtype=float)
    if not np.all(np.isfinite(f)):
        raise IntegrationError("non-finite right-hand side", t0)
    n_rhs = 1

    span = t_end - t0
    h = _initial_step(rhs, t0, y, f, span, rtol, atol)
    n_rhs += 1

    ts = [t0]
    ys = [y.copy()]
    fs = [f.copy()]
    n_acc = n_rej = 0
    t = t0
    K = np.empty((7, y.size))
    a = _A
    c = _C
    e = _E

    while t < t_end:
        if len(ts) > max_steps:
            raise IntegrationError("maximum number of steps exceeded", t)
        min_step = 10 * np.abs(np.nextafter(t, np.inf) - t)
        h = min(h, t_end - t)
        if t + h > t_end - min_step:
            h = t_end - t
        step_rejected = False
        while True:
            if h < min_step:
                raise IntegrationError("step size underflow", t)
            K[0] = f
            for s in range(1, 6):
                ys_stage = y + h * (a[s] @ K[:s])
                K[s] = rhs(t + c[s] * h, ys_stage)
            y_new = y + h * (a[6] @ K[:6])
            t_new = t + h if h != t_end - t else t_end
            f_new = np.asarray(rhs(t_new, y_new), dtype=float)
            K[6] = f_new
            n_rhs += 6
            if not (np.all(np.isfinite(y_new)) and np.all(np.isfinite(f_new))):
                n_rej += 1
                h *= 0.5
                step_rejected = True
                continue
            scale = atol + rtol * np.maximum(np.abs(y), np.abs(y_new))
            err = _rms(h * (e @ K) / scale)
            if err <= 1.0:
                if err == 0.0:
                    factor = _MAX_FACTOR
                else:
                    factor = min(_MAX_FACTOR, _SAFETY * err**_ERR_EXP)
                if step_rejected:
                    factor = min(1.0, factor)
                h_next = h * factor
                break
            n_rej += 1
            h *= max(_MIN_FACTOR, _SAFETY * err**_ERR_EXP)
            step_rejected = True

        t, y, f = t_new, y_new, f_new
        ts.append(t)
        ys.append(y)
        fs.append(f)
        n_acc += 1
        h = h_next

    return SolutionPath(
        nodes=np.array(ts),
        values=np.array(ys),
        derivs=np.array(fs),
        n_accepted=n_acc,
        n_rejected=n_rej,
        n_rhs=n_rhs,
        step_stats={"accepted": n_acc, "rejected": n_rej, "rhs_evals": n_rhs},
    )


def hermite_eval(
    nodes: np.ndarray, values: np.ndarray, derivs: np.ndarray, t: np.ndarray
) -> np.ndarray:
    """Piecewise cubic Hermite interpolation of vector data.

    ``values`` and ``derivs`` have shape ``(len(nodes), dim)``; the result has
    shape ``(len(t), dim)``. Nodes are reproduced exactly.
    """
    t = np.asarray(t, dtype=float)
    idx = np.searchsorted(nodes, t, side="right") - 1
    idx = np.clip(idx, 0, len(nodes) - 2)
    t0 = nodes[idx]
    h = nodes[idx + 1] - t0
    s = ((t - t0) / h)[:, None]
    hh = h[:, None]
    y0 = values[idx]
    y1 = values[idx + 1]
    d0 = derivs[idx]
    d1 = derivs[idx + 1]
    s2 = s * s
    s3 = s2 * s
    h00 = 2 * s3 - 3 * s2 + 1
    h10 = s3 - 2 * s2 + s
    h01 = -2 * s3 + 3 * s2
    h11 = s3 - s2
    out = h00 * y0 + h10 * hh * d0 + h01 * y1 + h11 * hh * d1
    # exact node reproduction (s == 0 already exact; s == 1 may round)
    at_right = s[:, 0] == 1.0
    if np.any(at_right):
        out[at_right] = y1[at_right]
    return out


def sample(path: SolutionPath, grid) -> np.ndarray:
    """Values of ``path`` on ``grid`` by cubic Hermite interpolation.

    Raises
    ------
    ValueError
        If a grid point lies outside ``[t_start, t_end]``.
    """
    grid = np.atleast_1d(np.asarray(grid, dtype=float))
    lo, hi = path.nodes[0], path.nodes[-1]
    if grid.size and (grid.min() < lo or grid.max() > hi):
        raise ValueError(f"grid points outside [{lo}, {hi}]")
    return hermite_eval(path.nodes, path.values, path.derivs, grid)
