"""Penalty terms that distinguish the baseline methods from plain FedAvg.

A penalty adds its value to the mini-batch cross-entropy and its gradient to the
cross-entropy gradient. DCFL and FedAvg use no penalty; FedProx, EWC and LwF each
contribute one.
"""

from typing import Protocol

import numpy as np

from fedreplay.core.experiment_config import ExperimentConfig, Method
from fedreplay.data import Dataset
from fedreplay.errors import DimensionError, DomainError
from fedreplay.models import (
	MlpParams,
	log_softmax,
	mlp_activations,
	mlp_backprop,
	mlp_fisher_diagonal,
	softmax,
)
from fedreplay.numkit import Matrix, Vector


class Regularizer(Protocol):
	"""Interface of an additive training penalty on the target model.

	Both methods receive the current parameters and the feature rows of the
	mini-batch being trained on; penalties that do not depend on data ignore them.
	"""

	def value(self, params: MlpParams, features: Matrix) -> float:
		"""Penalty value at `params`."""
		...

	def grad(self, params: MlpParams, features: Matrix) -> Vector:
		"""Flat gradient of the penalty at `params`."""
		...


def _check_anchor(params: MlpParams, anchor: Vector) -> Vector:
	flat = params.flatten()
	if flat.shape != anchor.shape:
		raise DimensionError(
			f"anchor has shape {anchor.shape}, parameters have {flat.shape}"
		)
	return flat - anchor


class ProximalPenalty:
	"""FedProx term `mu / 2 * ||theta - theta_global||^2`."""

	def __init__(self, anchor: Vector, mu: float) -> None:
		"""Tether to the flat global parameters `anchor` with weight `mu`."""
		self.anchor = anchor
		self.mu = mu

	def value(self, params: MlpParams, features: Matrix) -> float:
		"""Penalty value at `params`."""
		diff = _check_anchor(params, self.anchor)
		return 0.5 * self.mu * float(diff @ diff)

	def grad(self, params: MlpParams, features: Matrix) -> Vector:
		"""`mu * (theta - theta_global)`."""
		return self.mu * _check_anchor(params, self.anchor)


class EwcPenalty:
	"""Fisher-weighted quadratic tether `lam / 2 * sum_i F_i (theta_i - theta*_i)^2`.

	Attributes:
		anchor: Flat parameters at the end of the previous session.
		fisher: Diagonal Fisher estimate at `anchor`, same length.
		lam: Penalty weight.

	"""

	def __init__(self, anchor: Vector, fisher: Vector, lam: float) -> None:
		"""Create the penalty; `anchor` and `fisher` must have equal length."""
		if anchor.shape != fisher.shape:
			raise DimensionError("EWC anchor and Fisher diagonal differ in length")
		self.anchor = anchor
		self.fisher = fisher
		self.lam = lam

	def value(self, params: MlpParams, features: Matrix) -> float:
		"""Penalty value at `params`."""
		diff = _check_anchor(params, self.anchor)
		return 0.5 * self.lam * float(self.fisher @ (diff * diff))

	def grad(self, params: MlpParams, features: Matrix) -> Vector:
		"""`lam * F * (theta - theta*)`."""
		return self.lam * self.fisher * _check_anchor(params, self.anchor)


class DistillationPenalty:
	"""LwF term `lam * mean_i KL(softmax(teacher) || softmax(student))`.

	Temperature is 1 and the teacher is frozen.
	"""

	def __init__(self, teacher: MlpParams, lam: float) -> None:
		"""Distil from the frozen `teacher` with weight `lam`."""
		self.teacher = teacher
		self.lam = lam

	def _teacher_log_probs(self, features: Matrix) -> Matrix:
		_, logits = mlp_activations(self.teacher, features)
		return log_softmax(logits)

	def value(self, params: MlpParams, features: Matrix) -> float:
		"""Penalty value on the batch `features`."""
		if len(features) == 0:
			return 0.0
		teacher_log = self._teacher_log_probs(features)
		_, logits = mlp_activations(params, features)
		kl = (np.exp(teacher_log) * (teacher_log - log_softmax(logits))).sum(axis=1)
		return self.lam * float(kl.mean())

	def grad(self, params: MlpParams, features: Matrix) -> Vector:
		"""Backpropagated `lam * (p_student - p_teacher) / B` logit gradient."""
		if len(features) == 0:
			return np.zeros_like(params.flatten())
		teacher_probs = np.exp(self._teacher_log_probs(features))
		hidden, logits = mlp_activations(params, features)
		dlogits = self.lam * (softmax(logits) - teacher_probs) / len(features)
		return mlp_backprop(params, features, hidden, dlogits)


def make_penalty(
	config: ExperimentConfig,
	global_params: MlpParams,
	ewc_anchor: Vector | None,
	ewc_fisher: Vector | None,
	lwf_teacher: MlpParams | None,
) -> Regularizer | None:
	"""The penalty a method applies in this local update, if any.

	EWC and LwF are inactive until the first session has ended and left an anchor or
	teacher behind.
	"""
	match config.method:
		case Method.FEDPROX:
			return ProximalPenalty(global_params.flatten(), config.mu_prox)
		case Method.FEDAVG_EWC if ewc_anchor is not None and ewc_fisher is not None:
			return EwcPenalty(ewc_anchor, ewc_fisher, config.lambda_ewc)
		case Method.FEDAVG_LWF if lwf_teacher is not None:
			return DistillationPenalty(lwf_teacher, config.lambda_lwf)
		case _:
			return None


def ewc_fisher_estimate(params: MlpParams, data: Dataset) -> Vector:
	"""Empirical diagonal Fisher: mean squared per-example cross-entropy gradient.

	Raises:
		DomainError: If `data` is empty.

	"""
	if len(data) == 0:
		raise DomainError("Fisher estimate needs at least one example")
	return mlp_fisher_diagonal(params, data.features, data.labels)
