"""Scenario configs, presets, replicated runs and reports."""

from .config import (
    ConfigValidationError,
    Scenario,
    ScenarioConfig,
    build_scenario,
    load_and_validate_config,
    validate_config_dict,
)
from .presets import preset, preset_catalog, preset_names
from .reports import emit_reports
from .runner import (
    EstimateSummary,
    ScenarioResult,
    aggregate_replications,
    matched_truth,
    replication_seed,
    run_scenario,
)

__all__ = [
    "ConfigValidationError",
    "EstimateSummary",
    "Scenario",
    "ScenarioConfig",
    "ScenarioResult",
    "aggregate_replications",
    "build_scenario",
    "emit_reports",
    "load_and_validate_config",
    "matched_truth",
    "preset",
    "preset_catalog",
    "preset_names",
    "replication_seed",
    "run_scenario",
    "validate_config_dict",
]
