"""Experiment presets, configuration, orchestration and the command line."""

from .config import ExperimentConfig, Preset, build_config
from .runner import run_preset, tune

__all__ = ["ExperimentConfig", "Preset", "build_config", "run_preset", "tune"]
