"""Experiment orchestration: config, training loop, sweeps, plots, CLI."""

from .config import ExperimentConfig, load_config, make_smoother, parse_config
from .run import run, sweep

__all__ = [
    "ExperimentConfig",
    "load_config",
    "make_smoother",
    "parse_config",
    "run",
    "sweep",
]
