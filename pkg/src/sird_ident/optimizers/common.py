"""Configuration, history, stopping rules and problem adapters shared by the
optimisers."""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable

import numpy as np

__all__ = [
    "PGD",
    "FISTA",
    "NMAPG",
    "LMBFGS",
    "ALGORITHMS",
    "OptimizerConfig",
    "FitResult",
    "OptimizerFailure",
    "StopDecision",
    "History",
    "FunctionProblem",
    "MetricView",
    "stopping",
]

PGD = "pgd"
FISTA = "fista"
NMAPG = "nmapg"
LMBFGS = "lmbfgs"
ALGORITHMS = (PGD, FISTA, NMAPG, LMBFGS)

FIRST_ORDER = "first_order"
TRUST_REGION = "trust_region"


@dataclass(frozen=True)
class OptimizerConfig:
    """Settings of one optimiser run. Ranges are checked on construction.

    ``psi=None`` means ``min(0.1, l_A / 4)`` with ``l_A`` the smallest box
    width, resolved when the run starts.
    """

    algorithm: str = PGD
    it_max: int = 10_000
    tol_a: float = 1e-7
    tol_b: float = 5e-13
    max_backtracks: int = 60
    # projected gradient
    armijo: float = 1e-4
    step0: float = 1.0
    step_growth: float = 1.0
    # FISTA
    L0: float = 1.0
    eta: float = 2.0
    nu: float = 2.1
    # nmAPG
    mu: float = 0.8
    delta: float = 1e-4
    l_min: float = 1e-8
    l_max: float = 1e8
    # LM-BFGS trust region
    memory: int = 5
    theta_bar: float = 1.0
    psi: float | None = None
    c: float = 1.0
    zeta: float = 0.5
    nu_dec: float = 0.5
    nu_inc: float = 2.0
    tau_accept: float = 0.1
    tau_inc: float = 0.75
    sigma: float = 1e-4
    omega: float = 0.9
    delta0: float = 0.1
    delta_min: float = 1e-6
    delta_max: float = 1.0
    blend_tol: float = 1e-3
    exact_tr_dim: int = 64
    # divide each variable by its box width before optimising
    box_scaling: bool = False

    def __post_init__(self):
        checks = [
            (self.algorithm in ALGORITHMS, f"unknown algorithm {self.algorithm!r}"),
            (self.it_max >= 1, "it_max must be >= 1"),
            (self.tol_a >= 0 and self.tol_b >= 0, "tolerances must be >= 0"),
            (self.max_backtracks >= 1, "max_backtracks must be >= 1"),
            (0 < self.armijo < 1, "armijo must lie in (0, 1)"),
            (self.step0 > 0 and self.step_growth >= 1, "need step0 > 0, step_growth >= 1"),
            (self.L0 > 0, "L0 must be positive"),
            (self.eta > 1, "eta must exceed 1"),
            (self.nu > 2, "nu must exceed 2"),
            (0 <= self.mu < 1, "mu must lie in [0, 1)"),
            (self.delta > 0, "delta must be positive"),
            (0 < self.l_min <= self.l_max, "need 0 < l_min <= l_max"),
            (self.memory >= 1, "memory must be >= 1"),
            (self.theta_bar > 0, "theta_bar must be positive"),
            (self.psi is None or self.psi > 0, "psi must be positive"),
            (self.c > 0, "c must be positive"),
            (0 < self.zeta < 1, "zeta must lie in (0, 1)"),
            (0 < self.nu_dec < 1 < self.nu_inc, "need 0 < nu_dec < 1 < nu_inc"),
            (0 < self.tau_accept < self.tau_inc < 1, "need 0 < tau_accept < tau_inc < 1"),
            (0 < self.sigma < 1, "sigma must lie in (0, 1)"),
            (0 < self.omega < 1, "omega must lie in (0, 1)"),
            (self.delta0 > 0, "delta0 must be positive"),
            (0 < self.delta_min < self.delta_max, "need 0 < delta_min < delta_max"),
            (0 < self.blend_tol < 1, "blend_tol must lie in (0, 1)"),
        ]
        for ok, msg in checks:
            if not ok:
                raise ValueError(msg)

    def resolve_psi(self, lower, upper) -> float:
        """``psi`` checked against ``(0, l_A / 2)`` for the given box."""
        width = float(np.min(np.asarray(upper) - np.asarray(lower)))
        psi = min(0.1, width / 4) if self.psi is None else self.psi
        if not 0 < psi < width / 2:
            raise ValueError(f"psi must lie in (0, {width / 2}), got {psi}")
        return psi

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "OptimizerConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown optimiser settings: {sorted(unknown)}")
        return cls(**data)


@dataclass
class StopDecision:
    stop: bool
    reason: str | None = None


def stopping(history: "History", cfg: OptimizerConfig, phase: str = FIRST_ORDER) -> StopDecision:
    """Stopping rules evaluated after a completed iteration.

    Iteration cap, iterate discrepancy (first-order methods only) and the
    absolute/relative Himmeblau rules. The trust-region radius rule of
    LM-BFGS is handled inside that algorithm.
    """
    k = history.iterations
    if k < 1:
        return StopDecision(False)
    if k >= cfg.it_max:
        return StopDecision(True, "max_iterations")
    j_new, j_old = history.objectives[-1], history.objectives[-2]
    dj = abs(j_new - j_old)
    if phase == FIRST_ORDER:
        step = np.linalg.norm(history.iterates[-1] - history.iterates[-2])
        if step < cfg.tol_a * math.sqrt(history.iterates[-1].size):
            return StopDecision(True, "iterate_discrepancy")
    if dj < cfg.tol_b:
        return StopDecision(True, "himmeblau_absolute")
    if dj < cfg.tol_b * j_old:
        return StopDecision(True, "himmeblau_relative")
    return StopDecision(False)


class History:
    """Per-iteration record kept while an optimiser runs."""

    def __init__(self):
        self.iterates: list[np.ndarray] = []
        self.objectives: list[float] = []
        self.grad_norms: list[float] = []
        self.log: list[dict] = []
        self.t_start = time.perf_counter()

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1

    def record(self, x, j, grad_norm=math.nan, **info):
        self.iterates.append(np.array(x, dtype=float))
        self.objectives.append(float(j))
        self.grad_norms.append(float(grad_norm))
        if info:
            info["k"] = self.iterations
            self.log.append(info)


@dataclass
class FitResult:
    """Outcome of one optimiser run (iterates in the problem's coordinates)."""

    algorithm: str
    best_x: np.ndarray
    best_objective: float
    best_index: int
    iterates: np.ndarray
    objectives: np.ndarray
    grad_norms: np.ndarray
    reason: str
    wall_time: float
    n_value: int
    n_gradient: int
    log: list = field(default_factory=list)
    best_alpha: object = None

    @property
    def iterations(self) -> int:
        return len(self.objectives) - 1

    @property
    def best_so_far(self) -> np.ndarray:
        return np.minimum.accumulate(self.objectives)

    def to_dict(self) -> dict:
        return {
            "algorithm": self.algorithm,
            "best_x": self.best_x.tolist(),
            "best_objective": self.best_objective,
            "best_index": self.best_index,
            "iterates": self.iterates.tolist(),
            "objectives": self.objectives.tolist(),
            "grad_norms": [None if math.isnan(g) else g for g in self.grad_norms],
            "reason": self.reason,
            "wall_time": self.wall_time,
            "n_value": self.n_value,
            "n_gradient": self.n_gradient,
            "log": _jsonable(self.log),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "FitResult":
        return cls(
            algorithm=data["algorithm"],
            best_x=np.asarray(data["best_x"], float),
            best_objective=float(data["best_objective"]),
            best_index=int(data["best_index"]),
            iterates=np.asarray(data["iterates"], float),
            objectives=np.asarray(data["objectives"], float),
            grad_norms=np.array(
                [math.nan if g is None else g for g in data["grad_norms"]], float
            ),
            reason=data["reason"],
            wall_time=float(data["wall_time"]),
            n_value=int(data["n_value"]),
            n_gradient=int(data["n_gradient"]),
            log=data.get("log", []),
        )


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


class OptimizerFailure(RuntimeError):
    """An objective or gradient evaluation failed mid-run.

    ``result`` carries the history recorded up to the failure.
    """

    def __init__(self, message: str, result: FitResult):
        super().__init__(message)
        self.result = result


class FunctionProblem:
    """Box-constrained problem from plain callables (tests, toy models)."""

    def __init__(self, fun: Callable, grad: Callable, lower, upper, x0=None):
        self.fun = fun
        self.grad = grad
        self.lower = np.asarray(lower, dtype=float)
        self.upper = np.asarray(upper, dtype=float)
        self.x0 = self.lower.copy() if x0 is None else np.asarray(x0, dtype=float)
        self.n_variable = self.x0.size

    def value(self, x) -> float:
        return float(self.fun(np.asarray(x, dtype=float)))

    def gradient(self, x) -> np.ndarray:
        return np.asarray(self.grad(np.asarray(x, dtype=float)), dtype=float)


class MetricView:
    """Counts evaluations and rescales to Euclidean coordinates.

    With a diagonal metric ``m`` (quadrature weights of time-dependent
    parameters) the optimiser works in ``y = sqrt(m) x``, where the plain
    Euclidean gradient is ``sqrt(m) * g`` for the pointwise gradient ``g``.
    With ``box_scaling`` each variable is further divided by its box width
    (the gradient then picks up the width as a factor),
    a diagonal preconditioner for parameters of very different magnitude.
    The box stays a box, so projections are unchanged.
    """

    def __init__(self, problem, box_scaling: bool = False):
        self.problem = problem
        metric = getattr(problem, "metric", None)
        x0 = np.asarray(problem.x0, dtype=float)
        self.metric = np.ones(x0.size) if metric is None else np.asarray(metric, float)
        self.scale = np.sqrt(self.metric)
        if box_scaling:
            width = np.asarray(problem.upper, float) - np.asarray(problem.lower, float)
            if np.any(width <= 0) or not np.all(np.isfinite(width)):
                raise ValueError("box_scaling needs finite boxes of positive width")
            self.scale = self.scale / width
        self.identity = bool(np.all(self.scale == 1.0))
        self.lower = self.to_y(problem.lower)
        self.upper = self.to_y(problem.upper)
        self.x0 = np.clip(self.to_y(x0), self.lower, self.upper)
        self.n_params = int(getattr(problem, "n_variable", x0.size)) or x0.size
        self.n_value = 0
        self.n_gradient = 0

    def to_y(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return x.copy() if self.identity else self.scale * x

    def to_x(self, y) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        return y.copy() if self.identity else y / self.scale

    def project(self, y) -> np.ndarray:
        return np.minimum(np.maximum(y, self.lower), self.upper)

    def value(self, y) -> float:
        self.n_value += 1
        j = float(self.problem.value(self.to_x(y)))
        if not math.isfinite(j):
            raise FloatingPointError("objective is not finite")
        return j

    def gradient(self, y) -> np.ndarray:
        self.n_gradient += 1
        g = np.asarray(self.problem.gradient(self.to_x(y)), dtype=float)
        if not np.all(np.isfinite(g)):
            raise FloatingPointError("gradient is not finite")
        # chain rule for y = scale * x with the Euclidean gradient metric * g
        return g if self.identity else self.metric * g / self.scale

    def norm_r(self, g) -> float:
        """``s_v^{-1/2} ||g||_2``."""
        return float(np.linalg.norm(g) / math.sqrt(self.n_params))


def finish(view: MetricView, history: History, algorithm: str, reason: str) -> FitResult:
    """Assemble a :class:`FitResult` mapped back to problem coordinates."""
    obj = np.array(history.objectives)
    best = int(np.argmin(obj)) if obj.size else 0
    iterates = np.array([view.to_x(y) for y in history.iterates])
    best_x = iterates[best] if iterates.size else view.to_x(view.x0)
    result = FitResult(
        algorithm=algorithm,
        best_x=best_x,
        best_objective=float(obj[best]) if obj.size else math.nan,
        best_index=best,
        iterates=iterates,
        objectives=obj,
        grad_norms=np.array(history.grad_norms),
        reason=reason,
        wall_time=time.perf_counter() - history.t_start,
        n_value=view.n_value,
        n_gradient=view.n_gradient,
        log=history.log,
    )
    alpha = getattr(view.problem, "alpha", None)
    if callable(alpha):
        result.best_alpha = alpha(best_x)
    return result


def run_guarded(body, problem, cfg: OptimizerConfig, algorithm: str) -> FitResult:
    """Run ``body(view, history, cfg) -> reason`` and package the outcome.

    Evaluation failures are re-raised as :class:`OptimizerFailure` carrying
    the partial history.
    """
    view = MetricView(problem, cfg.box_scaling)
    history = History()
    try:
        reason = body(view, history, cfg)
    except (ArithmeticError, RuntimeError, ValueError) as exc:
        result = finish(view, history, algorithm, f"evaluation_failed: {exc}")
        raise OptimizerFailure(str(exc), result) from exc
    return finish(view, history, algorithm, reason)
