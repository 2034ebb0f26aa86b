"""Experiment orchestration: config, runner, metrics, comparison, charts, CLI."""

from .config import ExperimentConfig, PRESETS
from .runner import run_experiment
from .compare import compare_arms
from .charts import emit_charts

__all__ = ["ExperimentConfig", "PRESETS", "run_experiment", "compare_arms", "emit_charts"]
