"""Experiment configuration models and their YAML loader."""

import hashlib
import logging
from enum import StrEnum
from pathlib import Path
from typing import Any, Literal, Self

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from fedreplay.data import Scenario
from fedreplay.errors import ConfigError

logger = logging.getLogger(__name__)


class Method(StrEnum):
	"""Federated training method."""

	DCFL = "dcfl"
	FEDAVG = "fedavg"
	FEDPROX = "fedprox"
	FEDAVG_EWC = "fedavg_ewc"
	FEDAVG_LWF = "fedavg_lwf"


# --- Dataset config ---
class DatasetConfig(BaseModel):
	"""Where the data comes from and how it is prepared."""

	model_config = ConfigDict(extra="forbid")

	kind: Literal["blobs", "idx"] = "blobs"

	# Synthetic blobs
	num_classes: int = Field(10, ge=2)
	num_domains: int = Field(1, ge=1)
	samples_per_class_per_domain: int = Field(375, ge=0)
	d_feat: int = Field(2, ge=2)
	class_separation: float = Field(4.0, gt=0)
	domain_transform_strength: float = Field(1.0, ge=0)
	noise_std: float = Field(0.5, gt=0)

	# IDX files; separate test files replace the stratified split when given
	images_path: str | None = None
	labels_path: str | None = None
	test_images_path: str | None = None
	test_labels_path: str | None = None
	side_in: int = Field(28, ge=1)
	side_out: int | None = Field(None, ge=1)

	test_fraction: float = Field(0.2, gt=0, lt=1)
	domain_order: list[int] | None = None

	@model_validator(mode="after")
	def _check_sources(self) -> Self:
		if self.kind == "idx" and not (self.images_path and self.labels_path):
			raise ConfigError(
				"dataset.images_path", "idx datasets need images_path and labels_path"
			)
		if (self.test_images_path is None) != (self.test_labels_path is None):
			raise ConfigError(
				"dataset.test_images_path",
				"test_images_path and test_labels_path go together",
			)
		return self


# --- Experiment config ---
class ExperimentConfig(BaseModel):
	"""One continual federated run.

	Defaults follow the reference training setup: 100 rounds over 5 sessions, 20
	clients, 5 local target epochs, 100 diffusion epochs, Adam at 1e-4, batch 32 and as
	many synthetic as real samples.
	"""

	model_config = ConfigDict(extra="forbid")

	scenario: Scenario = Scenario.CLASS_INC_IID
	method: Method = Method.DCFL

	num_clients: int = Field(20, ge=1)
	num_sessions: int = Field(5, ge=1)
	rounds: int = Field(100, ge=1)
	classes_per_session: int = Field(2, ge=1)

	local_epochs: int = Field(5, ge=0)
	diffusion_epochs: int = Field(100, ge=0)
	batch_size: int = Field(32, ge=1)
	lr_target: float = Field(1e-4, gt=0)
	lr_diffusion: float = Field(1e-4, gt=0)

	replay_scale: float = Field(1.0, ge=0)
	replay_per_round: bool = False
	diffusion_steps: int = Field(200, ge=1)
	beta_start: float = Field(1e-4, gt=0, lt=1)
	beta_end: float = Field(0.02, gt=0, lt=1)

	mu_prox: float = Field(1.0, ge=0)
	lambda_ewc: float = Field(400.0, ge=0)
	lambda_lwf: float = Field(1.0, ge=0)

	hidden_width: int = Field(64, ge=1)
	denoiser_hidden: int = Field(128, ge=1)
	time_embedding_dim: int = Field(16, ge=2)
	cond_embedding_dim: int = Field(16, ge=1)

	seed: int = Field(0, ge=0)
	parallel_clients: bool = False
	output_dir: str = "results"
	dataset: DatasetConfig = Field(default_factory=DatasetConfig)

	@model_validator(mode="after")
	def _check_consistency(self) -> Self:
		if self.rounds % self.num_sessions:
			raise ConfigError("rounds", "T not divisible by S")
		if self.beta_start > self.beta_end:
			raise ConfigError("beta_start", "beta_start exceeds beta_end")
		if self.time_embedding_dim % 2:
			raise ConfigError("time_embedding_dim", "must be even")
		return self

	@property
	def rounds_per_session(self) -> int:
		"""Rounds between data changes, `T / S`."""
		return self.rounds // self.num_sessions


def config_digest(config: BaseModel) -> str:
	"""SHA-256 of the canonical JSON dump of a validated config."""
	return hashlib.sha256(config.model_dump_json().encode("utf-8")).hexdigest()


def load_config_from_file[T: BaseModel](
	config_path: str | Path, config_class: type[T]
) -> T:
	"""Load and validate config."""
	logger.info("Loading configuration from: %s", config_path)
	try:
		with open(config_path) as f:
			config_data = yaml.safe_load(f)

		validated_config = config_class(**(config_data or {}))
		return validated_config

	except FileNotFoundError:
		logger.exception("Config file not found at %s", config_path)
		raise
	except Exception:
		logger.exception("Failed to load or validate config %s", config_path)
		raise


def _config_error(error: ValidationError) -> ConfigError:
	first: dict[str, Any] = dict(error.errors()[0])
	original = first.get("ctx", {}).get("error")
	if isinstance(original, ConfigError):
		return original
	key = ".".join(str(part) for part in first["loc"]) or "<root>"
	return ConfigError(key, first["msg"])


def parse_config(path: str | Path) -> ExperimentConfig:
	"""Parse a YAML experiment config; unset keys take their defaults.

	Raises:
		FileNotFoundError: If `path` does not exist.
		ConfigError: On YAML syntax errors, unknown keys, type errors or violated
			constraints; the error names the offending key.

	"""
	try:
		return load_config_from_file(path, ExperimentConfig)
	except ValidationError as e:
		raise _config_error(e) from e
	except yaml.YAMLError as e:
		raise ConfigError("<root>", f"invalid YAML: {e}") from e
	except TypeError as e:
		raise ConfigError("<root>", "config must be a mapping of key: value") from e


def with_overrides(config: ExperimentConfig, **updates: Any) -> ExperimentConfig:
	"""A re-validated copy of `config` with top-level fields replaced.

	Raises:
		ConfigError: If the updated config is invalid.

	"""
	try:
		return ExperimentConfig.model_validate({**config.model_dump(), **updates})
	except ValidationError as e:
		raise _config_error(e) from e
