"""Configuration files, sweep scenarios and the ``simulate`` command."""

from .config import ConfigError, load_config, load_tree, resolve
from .experiment import (
    SCENARIOS, ExperimentSpec, RunManifest, describe_stage, list_presets, point_seed,
    run_experiment, validate_config,
)

__all__ = [
    "ConfigError", "ExperimentSpec", "RunManifest", "SCENARIOS", "describe_stage", "list_presets",
    "load_config", "load_tree", "point_seed", "resolve", "run_experiment", "validate_config",
]
