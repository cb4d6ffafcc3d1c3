import numpy as np
import pytest

from fedreplay.core.experiment_config import Method
from fedreplay.data import Dataset
from fedreplay.errors import DimensionError, DomainError
from fedreplay.flcore.client import train_target
from fedreplay.flcore.methods import (
	DistillationPenalty,
	EwcPenalty,
	ProximalPenalty,
	ewc_fisher_estimate,
	make_penalty,
)
from fedreplay.models import MlpParams
from fedreplay.numkit import RngStream
from fedreplay.selftest import default_gradient_checks, worst_gradient_error


def _params(seed: int = 0) -> MlpParams:
	return MlpParams.init(3, 5, 4, RngStream(seed))


def _data(n: int = 24) -> Dataset:
	rng = RngStream(77)
	return Dataset.from_arrays(rng.normal((n, 3)), rng.integers(0, 4, n), None, 4)


def test_proximal_gradient_vanishes_at_anchor():
	params = _params()
	penalty = ProximalPenalty(params.flatten(), mu=1.0)
	features = np.zeros((2, 3))
	assert not np.any(penalty.grad(params, features))
	assert penalty.value(params, features) == 0.0


def test_proximal_value():
	params = _params()
	anchor = params.flatten() - 2.0
	penalty = ProximalPenalty(anchor, mu=0.5)
	size = anchor.size
	assert penalty.value(params, np.zeros((1, 3))) == pytest.approx(0.25 * 4.0 * size)


def test_ewc_with_zero_fisher_is_inert():
	params = _params()
	penalty = EwcPenalty(_params(1).flatten(), np.zeros(params.flatten().size), 400.0)
	assert penalty.value(params, np.zeros((1, 3))) == 0.0
	assert not np.any(penalty.grad(params, np.zeros((1, 3))))


def test_ewc_rejects_mismatched_fisher():
	with pytest.raises(DimensionError):
		EwcPenalty(np.zeros(4), np.zeros(5), 1.0)


def test_penalty_rejects_wrong_anchor_length():
	with pytest.raises(DimensionError):
		ProximalPenalty(np.zeros(3), 1.0).grad(_params(), np.zeros((1, 3)))


def test_distillation_from_itself_is_zero():
	params = _params()
	penalty = DistillationPenalty(params, lam=1.0)
	features = _data().features
	assert penalty.value(params, features) == pytest.approx(0.0, abs=1e-12)
	np.testing.assert_allclose(penalty.grad(params, features), 0.0, atol=1e-12)


def test_distillation_is_positive_for_a_different_teacher():
	penalty = DistillationPenalty(_params(1), lam=2.0)
	assert penalty.value(_params(), _data().features) > 0.0


@pytest.mark.parametrize("name", ["fedprox", "ewc", "lwf"])
def test_penalty_gradients_match_finite_differences(name):
	checks = default_gradient_checks(RngStream(3))
	check = next(c for c in checks if c.name == name)
	assert worst_gradient_error(check, RngStream(4)) < 1e-4


def test_make_penalty_per_method(tiny_config):
	params = _params()
	anchor = params.flatten()
	fisher = np.ones_like(anchor)

	def penalty(method, **aux):
		config = tiny_config.model_copy(update={"method": method})
		return make_penalty(
			config,
			params,
			aux.get("anchor"),
			aux.get("fisher"),
			aux.get("teacher"),
		)

	assert penalty(Method.FEDAVG) is None
	assert penalty(Method.DCFL) is None
	assert isinstance(penalty(Method.FEDPROX), ProximalPenalty)
	assert penalty(Method.FEDAVG_EWC) is None
	assert isinstance(
		penalty(Method.FEDAVG_EWC, anchor=anchor, fisher=fisher), EwcPenalty
	)
	assert penalty(Method.FEDAVG_LWF) is None
	assert isinstance(penalty(Method.FEDAVG_LWF, teacher=params), DistillationPenalty)


def test_ewc_with_zero_fisher_reproduces_plain_training():
	params = _params()
	data = _data()
	penalty = EwcPenalty(_params(1).flatten(), np.zeros(params.flatten().size), 400.0)

	plain, plain_loss = train_target(params, data, 2, 8, 1e-2, RngStream(5))
	tethered, tethered_loss = train_target(
		params, data, 2, 8, 1e-2, RngStream(5), penalty
	)

	assert np.array_equal(plain.flatten(), tethered.flatten())
	assert plain_loss == tethered_loss


def test_fisher_estimate_is_non_negative():
	fisher = ewc_fisher_estimate(_params(), _data())
	assert fisher.shape == _params().flatten().shape
	assert np.all(fisher >= 0.0)


def test_fisher_estimate_rejects_empty_data():
	with pytest.raises(DomainError):
		ewc_fisher_estimate(_params(), Dataset.empty(3, 4))
