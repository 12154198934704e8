"""Orchestration: build problems from configs, run fits, grid searches,
gradient checks and result export."""

from __future__ import annotations

import csv
import json
import logging
import math
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__
from ..discretization import LINEAR, Interpolant, chebyshev_grid, simpson_integrate
from ..model import (
    PARAMETER_NAMES,
    ParameterVector,
    basic_reproduction_number,
    sensitivity_indices,
)
from ..objective import ReducedProblem, Setup, Target, check_stationarity
from ..optimizers import FitResult, OptimizerFailure, minimize
from .config import ExperimentConfig
from .targets import load_csv_target, synthesize_known_target, synthesize_noisy_target

__all__ = [
    "Experiment",
    "RunRecord",
    "GridResult",
    "build_experiment",
    "run_fit",
    "grid_search",
    "check_gradient",
    "export_results",
]

log = logging.getLogger(__name__)


@dataclass
class Experiment:
    """A configured reduced problem together with its ingredients."""

    config: ExperimentConfig
    target: Target
    setup: Setup
    alpha0: ParameterVector
    problem: ReducedProblem

    @property
    def population(self) -> float:
        return self.setup.population


def _zero_target(T: float) -> Target:
    return Target(Interpolant(np.array([0.0, T]), np.zeros((2, 3)), LINEAR), "synthetic")


def build_experiment(cfg: ExperimentConfig, target: Target | None = None) -> Experiment:
    """Target, grid, initial parameters and reduced problem for ``cfg``."""
    src = cfg.target
    rho0, T = cfg.rho0, cfg.T
    if target is None:
        if src.kind == "csv":
            target, n, T_data = load_csv_target(
                src.path, src.column_map, src.time_scale, src.population_scale
            )
            rho0 = tuple(target(0.0)) if rho0 is None else rho0
            T = T_data if T is None else min(T, T_data)
        elif src.kind == "known":
            target = synthesize_known_target(
                src.alpha_star, rho0, T, cfg.grid_size, cfg.rel_tol, cfg.abs_tol
            )
        elif src.kind == "noisy":
            target = synthesize_noisy_target(
                src.alpha_star, rho0, T, src.k, cfg.grid_size, src.amplitude,
                cfg.rel_tol, cfg.abs_tol,
            )
        else:
            target = _zero_target(T)
    rho0 = np.asarray(rho0, dtype=float)
    setup = Setup(rho0, chebyshev_grid(cfg.grid_size, T), cfg.rel_tol, cfg.abs_tol)
    n = setup.population
    if cfg.time_dependent:
        alpha0 = ParameterVector.time_dependent(
            setup.grid, *cfg.alpha0, fixed=cfg.fixed, upper=cfg.upper, lower=cfg.lower
        )
    else:
        alpha0 = ParameterVector.constant(
            *cfg.alpha0, fixed=cfg.fixed, upper=cfg.upper, lower=cfg.lower
        )
    alpha0 = alpha0.project()
    problem = ReducedProblem(alpha0, target, cfg.objective_spec(n), setup)
    return Experiment(cfg, target, setup, alpha0, problem)


# --------------------------------------------------------------------------
# fitting


def _environment() -> dict:
    import scipy

    return {
        "package": __version__,
        "python": platform.python_version(),
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "platform": platform.platform(),
    }


@dataclass
class RunRecord:
    """Config snapshot plus per-algorithm results and diagnostics."""

    config: dict
    results: dict = field(default_factory=dict)
    errors: dict = field(default_factory=dict)
    diagnostics: dict = field(default_factory=dict)
    environment: dict = field(default_factory=dict)
    timings: dict = field(default_factory=dict)

    def best(self) -> tuple[str, FitResult] | None:
        done = [(k, r) for k, r in self.results.items() if r is not None]
        if not done:
            return None
        return min(done, key=lambda kr: kr[1].best_objective)

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "results": {k: r.to_dict() for k, r in self.results.items()},
            "errors": self.errors,
            "diagnostics": self.diagnostics,
            "environment": self.environment,
            "timings": self.timings,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "RunRecord":
        return cls(
            config=data["config"],
            results={k: FitResult.from_dict(v) for k, v in data["results"].items()},
            errors=data.get("errors", {}),
            diagnostics=data.get("diagnostics", {}),
            environment=data.get("environment", {}),
            timings=data.get("timings", {}),
        )

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")
        return path

    @classmethod
    def load(cls, path) -> "RunRecord":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def _diagnostics(exp: Experiment, result: FitResult, tol: float) -> dict:
    alpha = exp.problem.alpha(result.best_x)
    grad = exp.problem.gradient_vector(result.best_x)
    report = check_stationarity(alpha, grad, tol)
    out = {
        "best_alpha": alpha.as_dict(),
        "gradient": grad.flat().tolist() if alpha.n_variable and not any(
            alpha.is_time_dependent) else None,
        "gradient_norm_r": exp.problem.grad_norm_r(grad.flat()),
        "stationarity": report.to_dict(),
    }
    if not any(alpha.is_time_dependent):
        vals = alpha.constant_values()
        try:
            out["R0"] = basic_reproduction_number(vals, exp.population)
            out["sensitivity"] = sensitivity_indices(vals).tolist()
        except ValueError as exc:
            out["R0"] = None
            out["sensitivity"] = None
            out["R0_error"] = str(exc)
    return out


def _fit_one(cfg_dict: dict, algorithm: str, stationarity_tol: float):
    cfg = ExperimentConfig.from_dict(cfg_dict)
    exp = build_experiment(cfg)
    t0 = time.perf_counter()
    try:
        result = minimize(exp.problem, cfg.optimizer(algorithm))
        error = None
    except OptimizerFailure as exc:
        result, error = exc.result, str(exc)
    diag = _diagnostics(exp, result, stationarity_tol) if result.objectives.size else {}
    return algorithm, result, error, diag, time.perf_counter() - t0


def run_fit(cfg: ExperimentConfig, algorithms=None, out_dir=None,
            workers: int | None = None, stationarity_tol: float = 1e-3) -> RunRecord:
    """Run every requested optimiser on the configured problem.

    A failure of one algorithm is recorded in ``errors`` and does not stop
    the others. With ``out_dir`` the record and CSV exports are written.
    """
    if algorithms is None:
        algorithms = [o.algorithm for o in cfg.optimizers]
    record = RunRecord(cfg.to_dict(), environment=_environment())
    workers = cfg.workers if workers is None else workers
    jobs = [(cfg.to_dict(), a, stationarity_tol) for a in algorithms]
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            outcomes = list(pool.map(_fit_one, *zip(*jobs)))
    else:
        outcomes = [_fit_one(*job) for job in jobs]
    for algorithm, result, error, diag, elapsed in outcomes:
        record.results[algorithm] = result
        record.diagnostics[algorithm] = diag
        record.timings[algorithm] = elapsed
        if error is not None:
            record.errors[algorithm] = error
            log.warning("%s failed: %s", algorithm, error)
    if out_dir is not None:
        export_results(record, out_dir)
    return record


# --------------------------------------------------------------------------
# grid search


@dataclass
class GridResult:
    names: tuple
    axes: tuple
    values: np.ndarray
    argmin: tuple
    minimum: float

    @property
    def best_point(self) -> dict:
        return {n: float(ax[i]) for n, ax, i in zip(self.names, self.axes, self.argmin)}

    def to_csv(self, path) -> Path:
        path = Path(path)
        with path.open("w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh)
            if len(self.names) == 1:
                writer.writerow([self.names[0], "objective"])
                for a, v in zip(self.axes[0], self.values):
                    writer.writerow([repr(float(a)), repr(float(v))])
            else:
                writer.writerow([f"{self.names[0]}\\{self.names[1]}",
                                 *(repr(float(b)) for b in self.axes[1])])
                for a, row in zip(self.axes[0], self.values):
                    writer.writerow([repr(float(a)), *(repr(float(v)) for v in row)])
        return path


def _grid_chunk(cfg_dict: dict, names, points) -> list[float]:
    exp = build_experiment(ExperimentConfig.from_dict(cfg_dict))
    out = []
    base = np.array(exp.alpha0.values, dtype=float)
    idx = [PARAMETER_NAMES.index(n) for n in names]
    for p in points:
        vals = base.copy()
        vals[idx] = p
        x = np.array([vals[i] for i in range(3) if exp.alpha0.variable[i]])
        try:
            out.append(exp.problem.value(x))
        except (ArithmeticError, RuntimeError, ValueError):
            out.append(math.nan)
    return out


def grid_search(cfg: ExperimentConfig, axes: dict, workers: int | None = None) -> GridResult:
    """Dense evaluation of ``j`` over one or two parameter axes.

    Parameters not on an axis keep their initial values. Failed evaluations
    are stored as NaN.
    """
    if not 1 <= len(axes) <= 2:
        raise ValueError("grid search needs one or two axes")
    names = tuple(axes)
    for n in names:
        if n not in PARAMETER_NAMES:
            raise ValueError(f"unknown parameter {n!r}")
        if n in cfg.fixed:
            raise ValueError(f"parameter {n!r} is fixed")
    if cfg.time_dependent:
        raise ValueError("grid search needs constant parameters")
    grids = tuple(np.asarray(axes[n], dtype=float) for n in names)
    mesh = np.meshgrid(*grids, indexing="ij")
    points = np.stack([m.ravel() for m in mesh], axis=1)
    workers = cfg.workers if workers is None else workers
    if workers > 1:
        chunks = np.array_split(points, workers * 4)
        with ProcessPoolExecutor(max_workers=workers) as pool:
            parts = pool.map(_grid_chunk, [cfg.to_dict()] * len(chunks),
                             [names] * len(chunks), chunks)
            flat = [v for part in parts for v in part]
    else:
        flat = _grid_chunk(cfg.to_dict(), names, points)
    values = np.array(flat).reshape(mesh[0].shape)
    k = int(np.nanargmin(values))
    argmin = np.unravel_index(k, values.shape)
    return GridResult(names, grids, values, tuple(int(i) for i in argmin), float(values.flat[k]))


# --------------------------------------------------------------------------
# gradient check


def check_gradient(cfg: ExperimentConfig, points: int = 10, h: float = 1e-6,
                   seed: int | None = None, rng_box=None,
                   direction_h: float | None = None) -> list[dict]:
    """Compare the adjoint gradient with central differences at random points.

    Constant parameters are checked coordinate-wise. Time-dependent ones
    along random smooth directions, where the directional derivative is the
    quadrature of ``g * direction``. Directions are scaled to the box
    width and differenced with ``direction_h`` (default ``h``).
    """
    exp = build_experiment(cfg)
    prob = exp.problem
    rng = np.random.default_rng(cfg.seed if seed is None else seed)
    lo, hi = prob.lower, prob.upper
    if rng_box is not None:
        lo = np.maximum(lo, np.asarray(rng_box[0], float)[prob.owner])
        hi = np.minimum(hi, np.asarray(rng_box[1], float)[prob.owner])
    reports = []
    td = any(exp.alpha0.is_time_dependent)
    nodes = exp.setup.grid.nodes
    for _ in range(points):
        if td:
            center = np.empty(prob.x0.size)
            for k in np.unique(prob.owner):
                mask = prob.owner == k
                a, b = lo[mask][0], hi[mask][0]
                c0, c1 = rng.uniform(0.3, 0.7, size=2)
                tau = nodes / nodes[-1]
                center[mask] = a + (b - a) * (c0 + (c1 - c0) * tau) * 0.8 + 0.1 * (b - a)
            x = center
            coeffs = rng.normal(size=(3, 3))
            direction = np.zeros_like(x)
            tau = nodes / nodes[-1]
            for k in np.unique(prob.owner):
                mask = prob.owner == k
                poly = np.polyval(coeffs[k], tau)
                direction[mask] = poly * (hi[mask][0] - lo[mask][0])
            g = prob.gradient(x)
            analytic = float(np.sum(prob.metric * g * direction))
            dh = h if direction_h is None else direction_h
            numeric = (prob.value(x + dh * direction) - prob.value(x - dh * direction)) / (2 * dh)
            err = abs(analytic - numeric) / max(abs(numeric), 1e-300)
            reports.append({"x": None, "analytic": [analytic], "numeric": [numeric],
                            "rel_error": err})
        else:
            x = rng.uniform(lo, hi)
            g = prob.gradient(x)
            fd = np.empty_like(x)
            for i in range(x.size):
                e = np.zeros_like(x)
                e[i] = h
                fd[i] = (prob.value(x + e) - prob.value(x - e)) / (2 * h)
            err = float(np.linalg.norm(g - fd) / max(np.linalg.norm(fd), 1e-300))
            reports.append({"x": x.tolist(), "analytic": g.tolist(),
                            "numeric": fd.tolist(), "rel_error": err})
    return reports


# --------------------------------------------------------------------------
# export


def _write_csv(path: Path, header, rows) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        writer.writerows(rows)


def export_results(record: RunRecord, out_dir, fmt: str = "json") -> list[Path]:
    """Write the run summary, per-iteration histories, fitted curves and
    convergence data.

    ``fmt`` selects the summary format; only ``"json"`` is supported.
    """
    if fmt != "json":
        raise ValueError(f"unsupported summary format {fmt!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = [record.save(out / "record.json")]
    cfg = ExperimentConfig.from_dict(record.config)
    exp = None
    for name, result in record.results.items():
        if result is None:
            continue
        hist = out / f"history_{name}.csv"
        n_x = result.iterates.shape[1] if result.iterates.ndim == 2 else 0
        header = ["iteration", "objective", "best_so_far", "grad_norm_r"]
        show_x = 0 < n_x <= 3
        if show_x:
            header += [f"x{i}" for i in range(n_x)]
        rows = []
        best = result.best_so_far if result.objectives.size else []
        for k, (j, b, gn) in enumerate(zip(result.objectives, best, result.grad_norms)):
            row = [k, repr(float(j)), repr(float(b)), "" if math.isnan(gn) else repr(float(gn))]
            if show_x:
                row += [repr(float(v)) for v in result.iterates[k]]
            rows.append(row)
        _write_csv(hist, header, rows)
        written.append(hist)
        if not result.objectives.size:
            continue
        if exp is None:
            exp = build_experiment(cfg)
        state = exp.problem.state(result.best_x)
        tgt = exp.target.on_grid(exp.setup.grid)
        curve = out / f"curve_{name}.csv"
        alpha_grid = exp.problem.alpha(result.best_x).on_grid(exp.setup.grid)
        _write_csv(
            curve,
            ["time", "S", "I", "R", "target_S", "target_I", "target_R",
             "beta", "gamma", "mort"],
            [
                [repr(float(t)), *(repr(float(v)) for v in r),
                 *(repr(float(v)) for v in q), *(repr(float(v)) for v in a)]
                for t, r, q, a in zip(exp.setup.grid.nodes, state.rho, tgt, alpha_grid)
            ],
        )
        written.append(curve)
    conv = out / "convergence.csv"
    names = [k for k, r in record.results.items() if r is not None]
    length = max((len(record.results[k].objectives) for k in names), default=0)
    rows = []
    for k in range(length):
        row = [k]
        for name in names:
            obj = record.results[name].objectives
            row.append(repr(float(obj[k])) if k < len(obj) else "")
        rows.append(row)
    _write_csv(conv, ["iteration", *names], rows)
    (out / "convergence.json").write_text(
        json.dumps({"x": "iteration", "y": "objective", "y_scale": "log",
                    "series": names, "file": conv.name}, indent=1),
        encoding="utf-8",
    )
    written.append(conv)
    return written
