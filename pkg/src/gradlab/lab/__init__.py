"""Experiment harness: JSON configs, synthetic data, numerical oracles and the CLI."""

from .config import ExperimentConfig, load_config, parse_config
from .experiments import Report, run_experiment

__all__ = ["ExperimentConfig", "Report", "load_config", "parse_config", "run_experiment"]
