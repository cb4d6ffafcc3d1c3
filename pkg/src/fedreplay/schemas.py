"""Pydantic schemas for experiment records and API requests and responses."""

import math
from typing import Any

from pydantic import BaseModel, Field, field_validator

from fedreplay.core.experiment_config import Method


# --- Experiment records ---
class RoundRecord(BaseModel):
	"""Metrics of one communication round.

	`session` and `round` are 1-based. `mean_train_loss` and `synthetic_fidelity_kl`
	are `None` when no client produced a value.
	"""

	round: int = Field(ge=1)
	session: int = Field(ge=1)
	method: Method
	global_accuracy: float = Field(ge=0.0, le=1.0)
	encountered_accuracy: float = Field(ge=0.0, le=1.0)
	mean_train_loss: float | None = None
	synthetic_fidelity_kl: float | None = None
	wall_time_s: float = Field(ge=0.0)
	client_train_loss: list[float | None] = Field(default_factory=list)

	@field_validator("client_train_loss", mode="before")
	@classmethod
	def _nan_to_none(cls, value: Any) -> Any:
		if isinstance(value, list):
			return [
				None if isinstance(v, float) and math.isnan(v) else v for v in value
			]
		return value


class SummaryRecord(BaseModel):
	"""Final metrics of one run, the single row of `summary.csv`."""

	method: Method
	scenario: str
	rounds: int
	final_accuracy: float
	final_encountered_accuracy: float
	mean_accuracy: float
	final_train_loss: float | None = None
	config_digest: str


# --- Run ---
class RunRequest(BaseModel):
	"""Request body for `/run` endpoint."""

	config_name: str


class RunResponse(BaseModel):
	"""Response body for `/run` endpoint."""

	output_dir: str
	summary: SummaryRecord
	rounds: list[RoundRecord]


# --- Selftest ---
class SuiteResultOutput(BaseModel):
	"""Outcome of one self-test suite in the `/selftest` response."""

	name: str
	passed: bool
	detail: str


class SelftestResponse(BaseModel):
	"""Response body for `/selftest` endpoint."""

	passed: bool
	suites: list[SuiteResultOutput]
