"""Scenario runner bindings."""

from ._core import (
    ConfigError,
    Report,
    Scenario,
    classify,
    defense_matrix_csv,
    load_scenario,
    parse_scenario,
    run,
)

__all__ = [
    "ConfigError",
    "Report",
    "Scenario",
    "classify",
    "defense_matrix_csv",
    "load_scenario",
    "parse_scenario",
    "run",
]
