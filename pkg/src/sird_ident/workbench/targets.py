"""Target trajectories: synthetic experiments, CSV ingestion and the
time-varying fixture used in place of external case data."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..discretization import HERMITE, LINEAR, Interpolant, chebyshev_grid, rolling_average
from ..model import ParameterVector, solve_state
from ..objective import Target

__all__ = [
    "TargetError",
    "synthesize_known_target",
    "synthesize_noisy_target",
    "load_csv_target",
    "write_target_csv",
    "fixture_parameters",
    "synthesize_fixture_csv",
    "COLUMNS",
]

COLUMNS = ("time", "susceptible", "infected", "recovered")


class TargetError(ValueError):
    """Malformed target data."""


def _as_alpha(alpha_star) -> ParameterVector:
    if isinstance(alpha_star, ParameterVector):
        return alpha_star
    return ParameterVector.constant(*map(float, alpha_star))


def synthesize_known_target(alpha_star, rho0, T: float, N: int = 200,
                            rel_tol: float = 1e-3, abs_tol: float = 1e-6) -> Target:
    """Target given by the model's own trajectory at ``alpha_star``."""
    state = solve_state(_as_alpha(alpha_star), rho0, T, N, rel_tol=rel_tol, abs_tol=abs_tol)
    return Target(state.interpolant(), "synthetic")


def synthesize_noisy_target(alpha_star, rho0, T: float, k: int = 50, N: int = 200,
                            amplitude: float = 4.0, rel_tol: float = 1e-3,
                            abs_tol: float = 1e-6) -> Target:
    """Sine-distorted model trajectory averaged over ``k`` uniform cells.

    The distortion is ``rho + amplitude * (sin(rho) - sin(rho0))``, which
    leaves the initial state unchanged.
    """
    rho0 = np.asarray(rho0, dtype=float)
    state = solve_state(_as_alpha(alpha_star), rho0, T, N, rel_tol=rel_tol, abs_tol=abs_tol)
    curve = state.interpolant()

    def distorted(t):
        r = curve(t)
        return r + amplitude * (np.sin(r) - np.sin(rho0))

    return Target(rolling_average(distorted, k, T), "rolling_average")


def load_csv_target(path, column_map: dict | None = None, time_scale: float = 1.0,
                    population_scale: float = 1.0):
    """Read a ``time,susceptible,infected,recovered`` table.

    ``column_map`` maps the canonical names to the file's headers. Times are
    divided by ``time_scale`` (7 turns days into weeks) and shifted to start
    at 0; counts are divided by ``population_scale``. Returns
    ``(target, n, T)`` with a piecewise-linear target and ``n`` the first
    row's total.
    """
    mapping = {name: name for name in COLUMNS}
    mapping.update(column_map or {})
    path = Path(path)
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        for name in COLUMNS:
            if mapping[name] not in header:
                raise TargetError(f"{path}: missing column {mapping[name]!r}")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            try:
                rows.append([float(row[mapping[name]]) for name in COLUMNS])
            except (TypeError, ValueError):
                raise TargetError(f"{path}: malformed value in row {lineno}") from None
            if any(v < 0 for v in rows[-1][1:]):
                raise TargetError(f"{path}: negative count in row {lineno}")
            if len(rows) > 1 and rows[-1][0] <= rows[-2][0]:
                raise TargetError(f"{path}: time not increasing at row {lineno}")
    if len(rows) < 2:
        raise TargetError(f"{path}: need at least two data rows")
    data = np.array(rows)
    t = (data[:, 0] - data[0, 0]) / time_scale
    values = data[:, 1:] / population_scale
    target = Target(Interpolant(t, values, LINEAR), "external")
    return target, float(values[0].sum()), float(t[-1])


def write_target_csv(path, times, values) -> None:
    values = np.asarray(values, dtype=float)
    with Path(path).open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(COLUMNS)
        for t, row in zip(times, values):
            writer.writerow([repr(float(t)), *(repr(float(v)) for v in row)])


# --------------------------------------------------------------------------
# time-varying fixture

FIXTURE_DAYS = 61
FIXTURE_RHO0 = (584.96, 0.03, 0.01)


def fixture_parameters(t, T: float) -> np.ndarray:
    """Smooth time-varying ``(beta, gamma, m)`` used to generate the fixture.

    An early outbreak: the infected compartment stays small relative to the
    population while contact falls off late in the window, recovery slows
    and mortality rises. ``beta <= 1e-2`` and ``gamma + m < 1`` throughout.
    """
    s = np.asarray(t, dtype=float) / T
    beta = 1.6e-3 * (1.0 - 0.5 / (1.0 + np.exp(-12.0 * (s - 0.75))))
    gamma = 0.25 - 0.08 * s
    mort = 0.01 + 0.03 * s**2
    return np.stack([beta, gamma, mort], axis=-1)


def synthesize_fixture_csv(path, days: int = FIXTURE_DAYS, rho0=FIXTURE_RHO0,
                           population_unit: float = 1e4) -> Path:
    """Write daily counts of the time-varying fixture in absolute units.

    The default covers days 0 to 60, a horizon of 60/7 weeks.

    The model runs in weeks and tens of thousands of people; the file holds
    days and persons, so loading it with ``time_scale=7`` and
    ``population_scale=1e4`` recovers the model scale.
    """
    T = (days - 1) / 7.0
    fine = chebyshev_grid(400, T)
    params = fixture_parameters(fine.nodes, T)
    alpha = ParameterVector.time_dependent(
        fine, params[:, 0], params[:, 1], params[:, 2], upper=(1e-2, 1.0, 1.0)
    )
    state = solve_state(alpha, rho0, grid=fine, rel_tol=1e-10, abs_tol=1e-10)
    itp = Interpolant(fine.nodes, state.rho, HERMITE, state.rho_dot)
    days_t = np.arange(days, dtype=float)
    values = itp(days_t / 7.0) * population_unit
    write_target_csv(path, days_t, values)
    return Path(path)
