"""Evaluation metrics and the synthetic-data fidelity diagnostic."""

from collections.abc import Callable, Iterable
from enum import StrEnum

import numpy as np
import numpy.typing as npt

from fedreplay.data import Dataset, Scenario
from fedreplay.errors import DomainError
from fedreplay.models import MlpParams, predict_batch
from fedreplay.numkit import IndexArray, Matrix, kl_gaussian_moment

Predictor = Callable[[Matrix], IndexArray]


class EncounterKey(StrEnum):
	"""Which component of a `(class, domain)` pair the encountered set restricts on."""

	CLASS = "class"
	DOMAIN = "domain"
	PAIR = "pair"

	@classmethod
	def for_scenario(cls, scenario: Scenario) -> "EncounterKey":
		"""Classes for class-incremental runs, domains for domain-incremental ones."""
		return cls.DOMAIN if scenario is Scenario.DOMAIN_INC else cls.CLASS


def correctness_flags(
	model: MlpParams | Predictor, test_set: Dataset
) -> npt.NDArray[np.bool_]:
	"""Per-example correctness of `model` on `test_set`.

	`model` is either classifier parameters or any callable mapping a feature batch
	to predicted labels.
	"""
	if isinstance(model, MlpParams):
		predicted = predict_batch(model, test_set.features)
	else:
		predicted = np.asarray(model(test_set.features), dtype=np.int64)
	return predicted == test_set.labels


def eval_global_accuracy(model: MlpParams | Predictor, test_set: Dataset) -> float:
	"""Fraction of `test_set` the model classifies correctly.

	Raises:
		DomainError: If `test_set` is empty.

	"""
	if len(test_set) == 0:
		raise DomainError("cannot evaluate on an empty test set")
	return float(correctness_flags(model, test_set).mean())


def encountered_mask(
	test_set: Dataset,
	encountered: Iterable[tuple[int, int]],
	key: EncounterKey = EncounterKey.PAIR,
) -> npt.NDArray[np.bool_]:
	"""Rows of `test_set` whose class, domain or pair lies in `encountered`."""
	pairs = set(encountered)
	match key:
		case EncounterKey.CLASS:
			wanted = np.array(sorted({label for label, _ in pairs}), dtype=np.int64)
			return np.isin(test_set.labels, wanted)
		case EncounterKey.DOMAIN:
			wanted = np.array(sorted({domain for _, domain in pairs}), dtype=np.int64)
			return np.isin(test_set.domains, wanted)
		case EncounterKey.PAIR:
			return np.fromiter(
				(
					(label, domain) in pairs
					for label, domain in zip(
						test_set.labels.tolist(), test_set.domains.tolist(), strict=True
					)
				),
				dtype=np.bool_,
				count=len(test_set),
			)


def eval_encountered_accuracy(
	model: MlpParams | Predictor,
	test_set: Dataset,
	encountered: Iterable[tuple[int, int]],
	key: EncounterKey = EncounterKey.PAIR,
) -> float:
	"""Accuracy restricted to test examples the clients have encountered so far.

	Args:
		model: Classifier parameters or a predictor callable.
		test_set: Full held-out set.
		encountered: `(class, domain)` pairs served to any client so far.
		key: Restrict on classes (class-incremental), domains (domain-incremental) or
			exact pairs.

	Returns:
		float: Correct restricted examples over all restricted examples.

	Raises:
		DomainError: If `encountered` is empty or selects no test example.

	"""
	pairs = set(encountered)
	if not pairs:
		raise DomainError("encountered set is empty")
	mask = encountered_mask(test_set, pairs, key)
	if not mask.any():
		raise DomainError("no test example belongs to the encountered set")
	return float(correctness_flags(model, test_set)[mask].mean())


def synthetic_fidelity_kl(real_prev: Dataset, synthetic: Dataset) -> float:
	"""Mean moment-matched Gaussian KL between real and synthetic data per pair.

	Each `(class, domain)` pair present in both sets contributes
	`kl_gaussian_moment(real_pair, synthetic_pair)`; pairs with fewer than
	`d_feat + 2` points on either side are skipped.

	Raises:
		DomainError: If no pair is shared, or none has enough points.

	"""
	shared = sorted(real_prev.pairs() & synthetic.pairs())
	if not shared:
		raise DomainError("real and synthetic data share no (class, domain) pair")
	min_points = real_prev.d_feat + 2
	values: list[float] = []
	for label, domain in shared:
		real_rows = real_prev.features[
			(real_prev.labels == label) & (real_prev.domains == domain)
		]
		synthetic_rows = synthetic.features[
			(synthetic.labels == label) & (synthetic.domains == domain)
		]
		if len(real_rows) < min_points or len(synthetic_rows) < min_points:
			continue
		values.append(kl_gaussian_moment(real_rows, synthetic_rows))
	if not values:
		raise DomainError(f"no shared pair has at least {min_points} points per side")
	return float(np.mean(values))
