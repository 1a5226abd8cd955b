"""Scenario configs, run logs, the runner, the auditor and report generation."""

from .config import ConfigError, ScenarioConfig, load_config, parse_config
from .runlog import RunLog
from .runner import MetricsReport, run_scenario

__all__ = ["ConfigError", "ScenarioConfig", "load_config", "parse_config", "RunLog", "MetricsReport",
           "run_scenario"]
