"""Continual federated learning with diffusion-model generative replay."""

from fedreplay.core.experiment_config import ExperimentConfig, Method, parse_config
from fedreplay.data import Dataset, Scenario
from fedreplay.experiment import build_experiment, execute
from fedreplay.flcore.server import run_experiment

__all__ = [
	"Dataset",
	"ExperimentConfig",
	"Method",
	"Scenario",
	"build_experiment",
	"execute",
	"parse_config",
	"run_experiment",
]
