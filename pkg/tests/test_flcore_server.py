import numpy as np
import pytest

from fedreplay.core.experiment_config import Method, with_overrides
from fedreplay.errors import ConfigError, DomainError, ExperimentError
from fedreplay.experiment import build_experiment
from fedreplay.flcore import server
from fedreplay.flcore.client import train_target
from fedreplay.flcore.metrics import eval_global_accuracy
from fedreplay.flcore.server import aggregate, run_experiment
from fedreplay.models import MlpParams
from fedreplay.numkit import RngStream


def _run(config, **kwargs):
	prepared = build_experiment(config)
	return run_experiment(
		config, prepared.schedule, prepared.train, prepared.test, **kwargs
	)


def _comparable(records):
	return [r.model_dump(exclude={"wall_time_s"}) for r in records]


# --- Aggregation ---
def test_aggregate_weights_by_sample_count():
	result = aggregate([np.array([0.0, 1.0]), np.array([4.0, 5.0])], [3, 1])
	np.testing.assert_allclose(result, [1.0, 2.0])


def test_aggregate_equal_counts_is_plain_mean(rng):
	params = [rng.split(k).normal(6) for k in range(4)]
	np.testing.assert_allclose(
		aggregate(params, [10] * 4), np.mean(params, axis=0), atol=1e-12
	)


def test_aggregate_single_client_is_identity(rng):
	flat = rng.normal(5)
	assert np.array_equal(aggregate([flat], [7]), flat)


def test_zero_count_client_is_ignored():
	result = aggregate([np.ones(2), np.full(2, 100.0)], [5, 0])
	np.testing.assert_allclose(result, [1.0, 1.0])


@pytest.mark.parametrize(
	("params", "counts"),
	[
		([], []),
		([np.zeros(2)], [1, 2]),
		([np.zeros(2), np.zeros(3)], [1, 1]),
		([np.zeros(2), np.zeros(2)], [0, 0]),
		([np.zeros(2), np.zeros(2)], [3, -1]),
	],
)
def test_aggregate_rejects_invalid_input(params, counts):
	with pytest.raises(DomainError):
		aggregate(params, counts)


# --- Experiment loop ---
def test_one_record_per_round(tiny_config):
	records = _run(tiny_config)
	assert [r.round for r in records] == [1, 2, 3, 4]
	assert [r.session for r in records] == [1, 1, 2, 2]
	for record in records:
		assert 0.0 <= record.global_accuracy <= 1.0
		assert 0.0 <= record.encountered_accuracy <= 1.0
		assert len(record.client_train_loss) == tiny_config.num_clients


def test_runs_are_deterministic(tiny_config):
	assert _comparable(_run(tiny_config)) == _comparable(_run(tiny_config))


def test_client_order_does_not_change_results(tiny_config):
	assert _comparable(_run(tiny_config)) == _comparable(
		_run(tiny_config, client_order=[1, 0])
	)


def test_parallel_clients_match_sequential(tiny_config):
	parallel = with_overrides(tiny_config, parallel_clients=True)
	assert _comparable(_run(parallel)) == _comparable(_run(tiny_config))


def test_fidelity_reported_once_replay_exists(tiny_config):
	records = _run(tiny_config)
	assert all(r.synthetic_fidelity_kl is None for r in records[:2])


def test_dcfl_without_replay_matches_fedavg(tiny_config):
	dcfl = _run(with_overrides(tiny_config, replay_scale=0.0))
	fedavg = _run(with_overrides(tiny_config, method=Method.FEDAVG))
	assert [r.global_accuracy for r in dcfl] == [r.global_accuracy for r in fedavg]
	assert [r.client_train_loss for r in dcfl] == [
		r.client_train_loss for r in fedavg
	]


def test_single_client_single_round_is_centralized_training(tiny_config):
	config = with_overrides(
		tiny_config,
		method=Method.FEDAVG,
		num_clients=1,
		num_sessions=1,
		rounds=1,
		classes_per_session=4,
		local_epochs=3,
	)
	prepared = build_experiment(config)
	records = run_experiment(
		config, prepared.schedule, prepared.train, prepared.test
	)

	master = RngStream(config.seed)
	init = MlpParams.init(
		prepared.train.d_feat,
		config.hidden_width,
		prepared.train.num_classes,
		master.split(server.INIT_STREAM).split(0),
	)
	trained, loss = train_target(
		init,
		prepared.train.subset(prepared.schedule.indices(0, 0)),
		config.local_epochs,
		config.batch_size,
		config.lr_target,
		master.split(server.CLIENT_STREAM).split(0).split(1).split(0),
	)

	assert len(records) == 1
	assert records[0].global_accuracy == eval_global_accuracy(trained, prepared.test)
	assert records[0].client_train_loss == [loss]


def test_checkpoints_written_per_session(tiny_config, tmp_path):
	_run(tiny_config, checkpoint_dir=tmp_path / "ckpt")
	written = sorted(p.name for p in (tmp_path / "ckpt").iterdir())
	assert written == ["session_01.npz", "session_02.npz"]


def test_config_and_schedule_must_agree(tiny_config):
	prepared = build_experiment(tiny_config)
	with pytest.raises(ConfigError) as info:
		run_experiment(
			with_overrides(tiny_config, num_clients=3),
			prepared.schedule,
			prepared.train,
			prepared.test,
		)
	assert info.value.key == "num_clients"


def test_client_order_must_be_a_permutation(tiny_config):
	with pytest.raises(ConfigError) as info:
		_run(tiny_config, client_order=[0, 0])
	assert info.value.key == "client_order"


def test_client_failure_names_round_and_client(tiny_config, monkeypatch):
	original = server.local_update

	def failing(client, *args, **kwargs):
		if client.client_id == 1:
			raise RuntimeError("boom")
		return original(client, *args, **kwargs)

	monkeypatch.setattr(server, "local_update", failing)
	with pytest.raises(ExperimentError) as info:
		_run(tiny_config)
	assert info.value.round == 1
	assert info.value.client_id == 1
	assert "boom" in str(info.value)
