"""Experiment configuration: TOML files, presets and validation."""

from __future__ import annotations

import copy
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli

from ..model import PARAMETER_NAMES
from ..objective import ObjectiveSpec
from ..optimizers import OptimizerConfig

__all__ = [
    "ConfigError",
    "TargetSource",
    "ExperimentConfig",
    "load_config",
    "preset_names",
]

TARGET_KINDS = ("known", "noisy", "csv", "zero")
DEFAULT_RHO0 = (199.0, 1.0, 0.0)
DEFAULT_T = 10.0


class ConfigError(ValueError):
    """Invalid or inconsistent experiment configuration."""


@dataclass
class TargetSource:
    """Where the target trajectory comes from."""

    kind: str = "known"
    alpha_star: tuple = (0.03, 0.6, 0.0)
    k: int = 50
    amplitude: float = 4.0
    path: str | None = None
    column_map: dict = field(default_factory=dict)
    time_scale: float = 1.0
    population_scale: float = 1.0

    def __post_init__(self):
        if self.kind not in TARGET_KINDS:
            raise ConfigError(f"unknown target kind {self.kind!r}")
        if self.kind == "csv" and not self.path:
            raise ConfigError("a csv target needs a path")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if len(self.alpha_star) != 3:
            raise ConfigError("alpha_star needs three entries")
        self.alpha_star = tuple(float(a) for a in self.alpha_star)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "alpha_star": list(self.alpha_star),
            "k": self.k,
            "amplitude": self.amplitude,
            "path": self.path,
            "column_map": dict(self.column_map),
            "time_scale": self.time_scale,
            "population_scale": self.population_scale,
        }


def _resolve_scale(value, n: float) -> float:
    if isinstance(value, str):
        table = {"1": 1.0, "n2": n**2, "2n2": 2 * n**2}
        if value not in table:
            raise ConfigError(f"unknown scale {value!r}; use a number, 'n2' or '2n2'")
        return table[value]
    return float(value)


@dataclass
class ExperimentConfig:
    """Everything needed to reproduce one fitting experiment.

    ``rho0`` and ``T`` are taken from the data for CSV targets unless given;
    otherwise they default to the known-solution system.
    ``objective`` is kept as a plain table until :meth:`objective_spec`
    resolves symbolic scales (``"n2"``, ``"2n2"``) against the population.
    Besides ``scale`` (divides the whole integral part) it accepts
    ``reg_scale``, which divides only the regularisation weights.
    """

    name: str = "experiment"
    rho0: tuple | None = None
    T: float | None = None
    grid_size: int = 200
    rel_tol: float = 1e-3
    abs_tol: float = 1e-6
    alpha0: tuple = (0.63696169, 0.26978671, 0.0)
    fixed: tuple = ()
    lower: tuple = (0.0, 0.0, 0.0)
    upper: tuple = (1.0, 1.0, 1.0)
    time_dependent: bool = False
    objective: dict = field(default_factory=lambda: {"form": "r1", "scale": "n2"})
    optimizers: list = field(default_factory=list)
    target: TargetSource = field(default_factory=TargetSource)
    output_dir: str = "runs"
    seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.target, dict):
            try:
                self.target = TargetSource(**self.target)
            except TypeError as exc:
                raise ConfigError(f"target: {exc}") from None
        opts = []
        for o in self.optimizers:
            if isinstance(o, OptimizerConfig):
                opts.append(o)
                continue
            try:
                opts.append(OptimizerConfig.from_dict(dict(o)))
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"optimizer: {exc}") from None
        self.optimizers = opts
        self.fixed = tuple(self.fixed)
        for name in self.fixed:
            if name not in PARAMETER_NAMES:
                raise ConfigError(f"unknown parameter {name!r} in fixed")
        for key in ("alpha0", "lower", "upper"):
            val = tuple(float(v) for v in getattr(self, key))
            if len(val) != 3:
                raise ConfigError(f"{key} needs three entries")
            setattr(self, key, val)
        lo, hi = np.array(self.lower), np.array(self.upper)
        if np.any(lo < 0) or np.any(lo >= hi):
            raise ConfigError("bounds must satisfy 0 <= lower < upper")
        if self.grid_size < 1:
            raise ConfigError("grid_size must be >= 1")
        if self.rel_tol <= 0 or self.abs_tol <= 0:
            raise ConfigError("integrator tolerances must be positive")
        if self.target.kind != "csv":
            # the known-solution system is the default problem
            self.rho0 = DEFAULT_RHO0 if self.rho0 is None else self.rho0
            self.T = DEFAULT_T if self.T is None else self.T
        if self.rho0 is not None:
            self.rho0 = tuple(float(v) for v in self.rho0)
            if len(self.rho0) != 3 or min(self.rho0) < 0 or sum(self.rho0) <= 0:
                raise ConfigError("rho0 needs three non-negative entries with positive sum")
        if self.T is not None and self.T <= 0:
            raise ConfigError("T must be positive")
        try:
            self.objective_spec(1.0)
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"objective: {exc}") from None

    @property
    def population(self) -> float:
        if self.rho0 is None:
            raise ConfigError("population unknown before the CSV target is loaded")
        return float(sum(self.rho0))

    def objective_spec(self, n: float | None = None) -> ObjectiveSpec:
        data = dict(self.objective)
        n = self.population if n is None else n
        data["scale"] = _resolve_scale(data.get("scale", 1.0), n)
        reg_scale = _resolve_scale(data.pop("reg_scale", 1.0), n)
        if reg_scale <= 0:
            raise ConfigError("reg_scale must be positive")
        data["reg_weights"] = np.asarray(data.get("reg_weights", 0.0), float) / reg_scale
        if isinstance(data.get("terminal_weights"), list):
            data["terminal_weights"] = np.array(data["terminal_weights"], float)
        return ObjectiveSpec.from_dict(data)

    def optimizer(self, algorithm: str) -> OptimizerConfig:
        for o in self.optimizers:
            if o.algorithm == algorithm:
                return o
        return OptimizerConfig(algorithm, it_max=100 if algorithm == "lmbfgs" else 10_000)

    def with_overrides(self, **changes) -> "ExperimentConfig":
        data = self.to_dict()
        for key, value in changes.items():
            if key.startswith("objective."):
                data["objective"][key.split(".", 1)[1]] = value
            elif key.startswith("target."):
                data["target"][key.split(".", 1)[1]] = value
            else:
                data[key] = value
        return ExperimentConfig.from_dict(data)

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "rho0": None if self.rho0 is None else list(self.rho0),
            "T": self.T,
            "grid_size": self.grid_size,
            "rel_tol": self.rel_tol,
            "abs_tol": self.abs_tol,
            "alpha0": list(self.alpha0),
            "fixed": list(self.fixed),
            "lower": list(self.lower),
            "upper": list(self.upper),
            "time_dependent": self.time_dependent,
            "objective": _plain(self.objective),
            "optimizers": [o.to_dict() for o in self.optimizers],
            "target": self.target.to_dict(),
            "output_dir": self.output_dir,
            "seed": self.seed,
            "workers": self.workers,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        data = copy.deepcopy(data)
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from None


def _plain(obj):
    if isinstance(obj, dict):
        return {k: _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _from_toml(doc: dict, base_dir: Path | None) -> ExperimentConfig:
    doc = dict(doc)
    model = doc.pop("model", {})
    params = doc.pop("parameters", {})
    defaults = doc.pop("optimizer_defaults", {})
    optimizers = doc.pop("optimizer", [])
    data = dict(doc)
    data.update(model)
    if params:
        mapping = {"initial": "alpha0", "fixed": "fixed", "lower": "lower",
                   "upper": "upper", "time_dependent": "time_dependent"}
        for key, value in params.items():
            if key not in mapping:
                raise ConfigError(f"unknown key parameters.{key}")
            data[mapping[key]] = value
    if isinstance(optimizers, dict):
        optimizers = [optimizers]
    data["optimizers"] = [{**defaults, **o} for o in optimizers]
    target = data.get("target")
    if target and target.get("path") and base_dir is not None:
        p = Path(target["path"])
        if not p.is_absolute():
            target["path"] = str((base_dir / p).resolve())
    return ExperimentConfig.from_dict(data)


def preset_names() -> list[str]:
    folder = resources.files(__package__) / "presets"
    return sorted(p.name[:-5] for p in folder.iterdir() if p.name.endswith(".toml"))


def load_config(source) -> ExperimentConfig:
    """Load a TOML file, or a bundled preset by name (e.g. ``"experiment1"``)."""
    path = Path(source)
    if path.exists():
        text = path.read_text(encoding="utf-8")
        base = path.parent
    else:
        name = str(source).removesuffix(".toml")
        res = resources.files(__package__) / "presets" / f"{name}.toml"
        if not res.is_file():
            raise ConfigError(
                f"no config file {source!r} and no preset of that name "
                f"(presets: {', '.join(preset_names())})"
            )
        text = res.read_text(encoding="utf-8")
        base = Path(str(res)).parent
    try:
        doc = tomli.loads(text)
    except tomli.TOMLDecodeError as exc:
        raise ConfigError(f"{source}: {exc}") from None
    return _from_toml(doc, base)

