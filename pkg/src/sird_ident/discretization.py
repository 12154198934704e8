"""Time grids, interpolation and quadrature on the time horizon."""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np

from .ode import hermite_eval

__all__ = [
    "TimeGrid",
    "chebyshev_grid",
    "uniform_grid",
    "Interpolant",
    "interpolate",
    "simpson_weights",
    "simpson_integrate",
    "rolling_average",
]

CHEBYSHEV = "chebyshev"
UNIFORM = "uniform"

HERMITE = "cubic_hermite"
LINEAR = "linear"
PIECEWISE_CONSTANT = "piecewise_constant_left"


@dataclass(frozen=True, eq=False)
class TimeGrid:
    """Strictly increasing time nodes covering ``[0, T]``."""

    nodes: np.ndarray
    kind: str = UNIFORM

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        if nodes.ndim != 1 or nodes.size < 2:
            raise ValueError("a grid needs at least two nodes")
        if np.any(np.diff(nodes) <= 0):
            raise ValueError("grid nodes must be strictly increasing")
        nodes.setflags(write=False)
        object.__setattr__(self, "nodes", nodes)

    @property
    def T(self) -> float:
        return float(self.nodes[-1])

    @property
    def size(self) -> int:
        return self.nodes.size

    def __len__(self) -> int:
        return self.nodes.size

    @cached_property
    def weights(self) -> np.ndarray:
        """Composite Simpson weights, see :func:`simpson_weights`."""
        w = simpson_weights(self.nodes)
        w.setflags(write=False)
        return w


def chebyshev_grid(n_interior: int, T: float) -> TimeGrid:
    """First-kind Chebyshev points mapped to ``[0, T]`` plus both endpoints."""
    if n_interior < 1:
        raise ValueError("need at least one interior Chebyshev point")
    if T <= 0:
        raise ValueError("horizon T must be positive")
    i = np.arange(n_interior)
    interior = 0.5 * T * (1.0 + np.cos((2 * i + 1) * np.pi / (2 * n_interior)))
    interior = interior[::-1]
    if n_interior % 2 == 1:
        interior[n_interior // 2] = 0.5 * T  # cos(pi/2) rounds to 6e-17
    return TimeGrid(np.concatenate(([0.0], interior, [T])), kind=CHEBYSHEV)


def uniform_grid(n_intervals: int, T: float) -> TimeGrid:
    if n_intervals < 1 or T <= 0:
        raise ValueError("need n_intervals >= 1 and T > 0")
    return TimeGrid(np.linspace(0.0, T, n_intervals + 1), kind=UNIFORM)


def simpson_weights(nodes) -> np.ndarray:
    """Quadrature weights of composite Simpson on arbitrary nodes.

    Intervals are consumed left to right. Two neighbouring intervals with
    length ratio in ``[1/2, 2]`` are integrated by the exact integral of the
    interpolating parabola; otherwise (or for a single leftover interval) a
    trapezoid is used. The ratio bound keeps every weight non-negative; on a
    uniform grid the rule is classical Simpson, closed by one trapezoid when
    the interval count is odd.
    """
    x = np.asarray(nodes, dtype=float)
    n = x.size
    if n < 3:
        raise ValueError("Simpson quadrature needs at least 3 nodes")
    h = np.diff(x)
    w = np.zeros(n)
    i = 0
    while i < n - 1:
        if i + 1 < n - 1 and 0.5 <= h[i + 1] / h[i] <= 2.0:
            h0, h1 = h[i], h[i + 1]
            hs = h0 + h1
            w[i] += hs / 6 * (2 - h1 / h0)
            w[i + 1] += hs**3 / (6 * h0 * h1)
            w[i + 2] += hs / 6 * (2 - h0 / h1)
            i += 2
        else:
            w[i] += 0.5 * h[i]
            w[i + 1] += 0.5 * h[i]
            i += 1
    return w


def simpson_integrate(grid, values) -> float | np.ndarray:
    """Integrate nodal ``values`` (first axis along the grid) over the grid."""
    if isinstance(grid, TimeGrid):
        w = grid.weights
    else:
        w = simpson_weights(grid)
    values = np.asarray(values, dtype=float)
    if values.shape[0] != w.size:
        raise ValueError("values must have one entry per grid node")
    return np.tensordot(w, values, axes=(0, 0))


@dataclass(frozen=True, eq=False)
class Interpolant:
    """Interpolated vector-valued curve on ``[nodes[0], nodes[-1]]``.

    For the piecewise-constant mode ``nodes`` are the ``k + 1`` cell edges and
    ``values`` the ``k`` cell values; the curve is right-continuous and takes
    the last cell value at the final time.
    """

    nodes: np.ndarray
    values: np.ndarray
    mode: str = LINEAR
    derivs: np.ndarray | None = None

    def __post_init__(self):
        nodes = np.asarray(self.nodes, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "values", values)
        if self.mode == PIECEWISE_CONSTANT:
            if values.shape[0] != nodes.size - 1:
                raise ValueError("piecewise-constant data needs one value per cell")
        elif self.mode == HERMITE:
            if self.derivs is None:
                raise ValueError("cubic Hermite interpolation needs derivatives")
            derivs = np.asarray(self.derivs, dtype=float).reshape(values.shape)
            object.__setattr__(self, "derivs", derivs)
        elif self.mode != LINEAR:
            raise ValueError(f"unknown interpolation mode {self.mode!r}")
        if self.mode != PIECEWISE_CONSTANT and values.shape[0] != nodes.size:
            raise ValueError("need one value per node")

    @property
    def t_start(self) -> float:
        return float(self.nodes[0])

    @property
    def t_end(self) -> float:
        return float(self.nodes[-1])

    @property
    def dim(self) -> int:
        return self.values.shape[1]

    def __call__(self, t) -> np.ndarray:
        scalar = np.ndim(t) == 0
        t = np.atleast_1d(np.asarray(t, dtype=float))
        if t.size and (t.min() < self.nodes[0] or t.max() > self.nodes[-1]):
            raise ValueError(
                f"evaluation outside [{self.nodes[0]}, {self.nodes[-1]}]"
            )
        if self.mode == HERMITE:
            out = hermite_eval(self.nodes, self.values, self.derivs, t)
        elif self.mode == LINEAR:
            idx = np.clip(np.searchsorted(self.nodes, t, side="right") - 1,
                          0, self.nodes.size - 2)
            t0 = self.nodes[idx]
            s = ((t - t0) / (self.nodes[idx + 1] - t0))[:, None]
            out = (1 - s) * self.values[idx] + s * self.values[idx + 1]
            exact = s[:, 0] == 1.0
            out[exact] = self.values[idx[exact] + 1]
        else:
            idx = np.clip(np.searchsorted(self.nodes, t, side="right") - 1,
                          0, self.values.shape[0] - 1)
            out = self.values[idx]
        return out[0] if scalar else out

    def at(self, t: float) -> np.ndarray:
        """Unchecked scalar evaluation (hot path inside ODE right-hand sides)."""
        x = self.nodes
        if self.mode == PIECEWISE_CONSTANT:
            k = int(np.searchsorted(x, t, side="right")) - 1
            k = min(max(k, 0), self.values.shape[0] - 1)
            return self.values[k]
        k = int(np.searchsorted(x, t, side="right")) - 1
        k = min(max(k, 0), x.size - 2)
        t0 = x[k]
        h = x[k + 1] - t0
        s = (t - t0) / h
        if self.mode == LINEAR:
            return (1 - s) * self.values[k] + s * self.values[k + 1]
        s2 = s * s
        s3 = s2 * s
        return (
            (2 * s3 - 3 * s2 + 1) * self.values[k]
            + (s3 - 2 * s2 + s) * h * self.derivs[k]
            + (-2 * s3 + 3 * s2) * self.values[k + 1]
            + (s3 - s2) * h * self.derivs[k + 1]
        )

    def integral(self, a: float, b: float) -> np.ndarray:
        """Exact integral of the interpolant over ``[a, b]``."""
        if not (self.nodes[0] <= a <= b <= self.nodes[-1]):
            raise ValueError("integration limits outside the interpolant domain")
        if a == b:
            return np.zeros(self.dim)
        x = self.nodes
        lo = np.searchsorted(x, a, side="right")
        hi = np.searchsorted(x, b, side="left")
        edges = np.concatenate(([a], x[lo:hi], [b]))
        total = np.zeros(self.dim)
        if self.mode == PIECEWISE_CONSTANT:
            mids = 0.5 * (edges[:-1] + edges[1:])
            return np.diff(edges) @ self(mids)
        # exact for piecewise polynomials up to degree 3 (Gauss-Legendre, 2 points)
        gl = np.array([-1.0, 1.0]) / np.sqrt(3.0)
        for p, q in zip(edges[:-1], edges[1:]):
            mid, half = 0.5 * (p + q), 0.5 * (q - p)
            pts = np.clip(mid + half * gl, p, q)
            total += half * self(pts).sum(axis=0)
        return total


def interpolate(itp: Interpolant, t) -> np.ndarray:
    return itp(t)


def rolling_average(
    values: Interpolant | Callable[[np.ndarray], np.ndarray],
    k: int,
    T: float | None = None,
    panels: int = 32,
) -> Interpolant:
    """Cell means of a curve over ``k`` uniform cells of ``[0, T]``.

    ``values`` is an :class:`Interpolant` (integrated exactly) or a callable
    mapping an array of times to an array of shape ``(len(t), dim)``, which is
    integrated with ``panels`` 8-point Gauss-Legendre panels per cell.
    """
    if k < 1:
        raise ValueError("need at least one cell")
    if isinstance(values, Interpolant):
        t0, t1 = values.t_start, values.t_end
        edges = np.linspace(t0, t1, k + 1)
        means = np.array(
            [values.integral(a, b) / (b - a) for a, b in zip(edges[:-1], edges[1:])]
        )
    else:
        if T is None:
            raise ValueError("T is required when averaging a callable")
        edges = np.linspace(0.0, T, k + 1)
        xg, wg = np.polynomial.legendre.leggauss(8)
        means = []
        for a, b in zip(edges[:-1], edges[1:]):
            sub = np.linspace(a, b, panels + 1)
            mid = 0.5 * (sub[:-1] + sub[1:])[:, None]
            half = 0.5 * np.diff(sub)[:, None]
            pts = (mid + half * xg).ravel()
            wts = (half * wg).ravel()
            vals = np.asarray(values(pts), dtype=float)
            if vals.ndim == 1:
                vals = vals[:, None]
            means.append(wts @ vals / (b - a))
        means = np.array(means)
    return Interpolant(edges, means, mode=PIECEWISE_CONSTANT)
