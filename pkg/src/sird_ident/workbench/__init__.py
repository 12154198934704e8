"""Experiment workbench: configs, targets, runs, grid searches and the CLI."""

from .config import ConfigError, ExperimentConfig, TargetSource, load_config, preset_names
from .runner import (
    Experiment,
    GridResult,
    RunRecord,
    build_experiment,
    check_gradient,
    export_results,
    grid_search,
    run_fit,
)
from .targets import (
    TargetError,
    fixture_parameters,
    load_csv_target,
    synthesize_fixture_csv,
    synthesize_known_target,
    synthesize_noisy_target,
    write_target_csv,
)

__all__ = [
    "ConfigError",
    "ExperimentConfig",
    "TargetSource",
    "load_config",
    "preset_names",
    "Experiment",
    "GridResult",
    "RunRecord",
    "build_experiment",
    "check_gradient",
    "export_results",
    "grid_search",
    "run_fit",
    "TargetError",
    "fixture_parameters",
    "load_csv_target",
    "synthesize_fixture_csv",
    "synthesize_known_target",
    "synthesize_noisy_target",
    "write_target_csv",
]
