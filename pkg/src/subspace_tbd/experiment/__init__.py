"""Experiment harness: config, grid runner, summaries, exports and the CLI."""

from .config import ConfigError, ExperimentConfig
from .runner import RunResult, generate_trial, rmse, run_cell, run_grid, summarize
