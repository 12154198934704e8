"""Command-line entry point.

Exit codes: 0 on success, 1 for invalid input (bad config, malformed
data, bad arguments), 2 when a numerical run or check fails.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np
import tomli

from ..discretization import chebyshev_grid
from ..model import (
    PARAMETER_NAMES,
    InvariantViolation,
    ParameterVector,
    basic_reproduction_number,
    sensitivity_indices,
    solve_state,
)
from ..ode import IntegrationError
from .config import ConfigError, ExperimentConfig, load_config, preset_names
from .runner import build_experiment, check_gradient, grid_search, run_fit
from .targets import TargetError, synthesize_fixture_csv, write_target_csv

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2

log = logging.getLogger("sird_ident")


def _parse_value(text: str):
    try:
        return tomli.loads(f"v = {text}")["v"]
    except tomli.TOMLDecodeError:
        return text


def _config(args) -> ExperimentConfig:
    cfg = load_config(args.config)
    overrides = {}
    for item in args.set or ():
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        overrides[key.strip()] = _parse_value(value.strip())
    if getattr(args, "workers", None):
        overrides["workers"] = args.workers
    return cfg.with_overrides(**overrides) if overrides else cfg


def _add_config_args(p: argparse.ArgumentParser, default: str | None = None) -> None:
    p.add_argument("--config", default=default, required=default is None,
                   help="TOML file or preset name (%s)" % ", ".join(preset_names()))
    p.add_argument("--set", action="append", metavar="KEY=VALUE",
                   help="override a config entry, e.g. objective.reg_weights=1e-3")


# --------------------------------------------------------------------------
# subcommands


def _rho0(text: str | None, n: float | None) -> np.ndarray:
    if text is None:
        if n is None:
            raise ConfigError("simulate needs --rho0 or --n")
        return np.array([n - 1.0, 1.0, 0.0])
    try:
        rho0 = np.array([float(v) for v in text.split(",")])
    except ValueError:
        raise ConfigError(f"--rho0 expects s,i,r, got {text!r}") from None
    if rho0.shape != (3,) or np.any(rho0 < 0):
        raise ConfigError("--rho0 needs three non-negative numbers")
    if n is not None and not np.isclose(rho0.sum(), n, rtol=1e-12, atol=0.0):
        raise ConfigError(f"--rho0 sums to {rho0.sum():g}, not n = {n:g}")
    return rho0


def cmd_simulate(args) -> int:
    rho0 = _rho0(args.rho0, args.n)
    grid = chebyshev_grid(args.grid_size, args.T)
    alpha = ParameterVector.constant(args.beta, args.gamma, args.m)
    state = solve_state(alpha, rho0, grid=grid, rel_tol=args.rel_tol, abs_tol=args.abs_tol)
    n = state.population
    deaths = n - state.rho.sum(axis=1)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    with out.open("w", encoding="utf-8") as fh:
        fh.write("time,S,I,R,D\n")
        for t, r, d in zip(grid.nodes, state.rho, deaths):
            fh.write(",".join(repr(float(v)) for v in (t, *r, d)) + "\n")
    vals = alpha.constant_values()
    print(f"wrote {out} ({grid.size} nodes, n = {n:g})")
    if vals[0] > 0 and vals[1] + vals[2] > 0:
        print(f"R0 = {basic_reproduction_number(vals, n):.6g}")
        print("sensitivity = " + " ".join(f"{v + 0.0:.6g}" for v in sensitivity_indices(vals)))
    return EXIT_OK


def cmd_gen_target(args) -> int:
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    if args.kind == "fixture":
        synthesize_fixture_csv(out, days=args.days)
        print(f"wrote {out}")
        return EXIT_OK
    if args.config is None:
        args.config = "experiment1" if args.kind == "known" else "experiment2"
    cfg = _config(args)
    if cfg.target.kind != args.kind:
        cfg = cfg.with_overrides(**{"target.kind": args.kind})
    exp = build_experiment(cfg)
    nodes = np.linspace(0.0, exp.setup.T, args.samples)
    write_target_csv(out, nodes, exp.target(nodes))
    print(f"wrote {out} ({args.samples} samples of the {cfg.target.kind} target)")
    return EXIT_OK


def _format_alpha(values: dict) -> str:
    parts = []
    for name in PARAMETER_NAMES:
        v = values[name]
        if isinstance(v, list):
            parts.append(f"{name}=[{min(v):.4g}, {max(v):.4g}]")
        else:
            parts.append(f"{name}={v:.6g}")
    return " ".join(parts)


def cmd_fit(args) -> int:
    cfg = _config(args)
    out = Path(args.out) if args.out else Path(cfg.output_dir) / cfg.name
    record = run_fit(cfg, args.algo, out_dir=out)
    print(f"{'algorithm':<8} {'iters':>6} {'objective':>12} {'grad_r':>10} {'time':>7}  reason")
    for name, result in record.results.items():
        diag = record.diagnostics.get(name, {})
        gn = diag.get("gradient_norm_r", float("nan"))
        print(f"{name:<8} {result.iterations:>6d} {result.best_objective:>12.5e} "
              f"{gn:>10.3e} {record.timings[name]:>6.1f}s  {result.reason}")
        if "best_alpha" in diag:
            print(f"         {_format_alpha(diag['best_alpha'])}")
    for name, err in record.errors.items():
        print(f"{name}: FAILED: {err}", file=sys.stderr)
    print(f"results in {out}")
    return EXIT_NUMERIC if record.errors else EXIT_OK


def _axis(spec: str):
    name, sep, rng = spec.partition("=")
    parts = rng.split(":")
    if not sep or len(parts) != 3:
        raise ConfigError(f"--axis expects name=lo:hi:count, got {spec!r}")
    lo, hi, count = float(parts[0]), float(parts[1]), int(parts[2])
    if count < 2 or hi <= lo:
        raise ConfigError(f"bad axis range {spec!r}")
    return name, np.linspace(lo, hi, count)


def cmd_grid(args) -> int:
    cfg = _config(args)
    axes = dict(_axis(a) for a in args.axis)
    result = grid_search(cfg, axes)
    if args.out:
        result.to_csv(args.out)
        print(f"wrote {args.out}")
    point = " ".join(f"{k}={v:.6g}" for k, v in result.best_point.items())
    print(f"minimum {result.minimum:.6e} at {point}")
    n_bad = int(np.isnan(result.values).sum())
    if n_bad:
        print(f"{n_bad} grid points failed to evaluate", file=sys.stderr)
    return EXIT_OK


def cmd_check_grad(args) -> int:
    cfg = _config(args)
    if args.tight:
        cfg = cfg.with_overrides(rel_tol=1e-10, abs_tol=1e-13,
                                 grid_size=max(cfg.grid_size, 400))
    reports = check_gradient(cfg, args.points, args.h, seed=args.seed)
    worst = max(r["rel_error"] for r in reports)
    for k, r in enumerate(reports):
        flag = "ok" if r["rel_error"] <= args.tol else "FAIL"
        print(f"point {k:2d}: relative error {r['rel_error']:.3e} {flag}")
    print(f"worst {worst:.3e} (tolerance {args.tol:g})")
    return EXIT_OK if worst <= args.tol else EXIT_NUMERIC


# --------------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    """Usage errors count as configuration errors."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="sird-ident", description="Parameter identification for the SIRD model."
    )
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("simulate", help="integrate the model for constant parameters")
    p.add_argument("--beta", type=float, required=True)
    p.add_argument("--gamma", type=float, required=True)
    p.add_argument("--m", type=float, default=0.0, help="mortality rate")
    p.add_argument("--n", type=float, help="population; checked against --rho0")
    p.add_argument("--rho0", metavar="S,I,R", help="initial state (default n-1,1,0)")
    p.add_argument("--T", type=float, required=True)
    p.add_argument("--grid-size", type=int, default=200)
    p.add_argument("--rel-tol", type=float, default=1e-6)
    p.add_argument("--abs-tol", type=float, default=1e-9)
    p.add_argument("--out", default="trajectory.csv")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("gen-target", help="write a target trajectory as CSV")
    p.add_argument("kind", choices=["known", "noisy", "fixture"],
                   help="known/noisy sample the target of a config (default presets "
                        "experiment1/experiment2); fixture writes the time-varying "
                        "daily-count data set")
    p.add_argument("--config")
    p.add_argument("--set", action="append", metavar="KEY=VALUE")
    p.add_argument("--samples", type=int, default=201)
    p.add_argument("--days", type=int, default=61)
    p.add_argument("--out", default="target.csv")
    p.set_defaults(func=cmd_gen_target)

    p = sub.add_parser("fit", help="run the optimisers on a configured problem")
    _add_config_args(p)
    p.add_argument("--algo", action="append", choices=["pgd", "fista", "nmapg", "lmbfgs"],
                   help="repeat to select several; default: all configured")
    p.add_argument("--out", help="output directory (default: <output_dir>/<name>)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("grid", help="evaluate the objective on a parameter grid")
    _add_config_args(p, default="landscape")
    p.add_argument("--axis", action="append", required=True, metavar="NAME=LO:HI:COUNT")
    p.add_argument("--out")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=cmd_grid)

    p = sub.add_parser("check-grad", help="compare adjoint and finite-difference gradients")
    _add_config_args(p, default="experiment1")
    p.add_argument("--points", type=int, default=10)
    p.add_argument("--h", type=float, default=1e-6)
    p.add_argument("--tol", type=float, default=1e-4)
    p.add_argument("--seed", type=int)
    p.add_argument("--tight", action="store_true",
                   help="tight integrator tolerances and at least 400 grid nodes, so "
                        "differencing and quadrature errors stay small")
    p.set_defaults(func=cmd_check_grad)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2),
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.func(args)
    except (ConfigError, TargetError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (InvariantViolation, IntegrationError, ArithmeticError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
