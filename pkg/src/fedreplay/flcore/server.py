"""Server-side aggregation and the experiment driver."""

import asyncio
import logging
import math
import time
from collections.abc import Callable, Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedreplay.core.experiment_config import ExperimentConfig
from fedreplay.data import ClientSchedule, Dataset
from fedreplay.diffusion import NoiseSchedule, make_linear_schedule
from fedreplay.errors import ConfigError, DomainError, ExperimentError
from fedreplay.flcore.checkpoint import save_checkpoint
from fedreplay.flcore.client import (
	ClientState,
	LocalUpdate,
	end_session,
	load_session,
	local_update,
)
from fedreplay.flcore.metrics import (
	EncounterKey,
	eval_encountered_accuracy,
	eval_global_accuracy,
)
from fedreplay.models import MlpParams
from fedreplay.numkit import RngStream, Vector
from fedreplay.schemas import RoundRecord

logger = logging.getLogger(__name__)

# Child keys of the master stream.
INIT_STREAM = 0
CLIENT_STREAM = 1


@dataclass
class GlobalState:
	"""The server's model and position in the run."""

	global_params: MlpParams
	round: int = 0
	session: int = 0


def aggregate(client_params: Sequence[Vector], sample_counts: Sequence[int]) -> Vector:
	"""Sample-count weighted mean of flat client parameters.

	Args:
		client_params: One flat parameter vector per client, in a fixed order.
		sample_counts: Training-set size of each client, synthetic samples included.

	Returns:
		Vector: `sum_k (n_k / sum n) * theta_k`.

	Raises:
		DomainError: If the input is empty, lengths differ, a count is negative or the
			counts sum to zero.

	"""
	if not client_params:
		raise DomainError("nothing to aggregate")
	if len(client_params) != len(sample_counts):
		raise DomainError(
			f"{len(client_params)} parameter vectors but {len(sample_counts)} counts"
		)
	stacked = np.stack([np.asarray(p, dtype=np.float64) for p in client_params])
	if stacked.ndim != 2:
		raise DomainError("client parameters must be flat vectors of equal length")
	counts = np.asarray(sample_counts, dtype=np.float64)
	if np.any(counts < 0) or counts.sum() <= 0:
		raise DomainError("sample counts must be non-negative with a positive total")
	weights = counts / counts.sum()
	return weights @ stacked


def _check_consistency(config: ExperimentConfig, schedule: ClientSchedule) -> None:
	for key, expected, actual in (
		("num_clients", config.num_clients, schedule.num_clients),
		("num_sessions", config.num_sessions, schedule.num_sessions),
		("rounds", config.rounds, schedule.total_rounds),
	):
		if expected != actual:
			raise ConfigError(key, f"config has {expected}, schedule has {actual}")


def _mean_or_none(values: Sequence[float | None]) -> float | None:
	finite = [v for v in values if v is not None and math.isfinite(v)]
	return float(np.mean(finite)) if finite else None


async def _gather_updates(jobs: Sequence[Callable[[], LocalUpdate]]) -> list:
	return await asyncio.gather(
		*(asyncio.to_thread(job) for job in jobs), return_exceptions=True
	)


def _run_local_updates(
	clients: Sequence[ClientState],
	order: Sequence[int],
	global_params: MlpParams,
	config: ExperimentConfig,
	round: int,
	client_rng: RngStream,
	noise_schedule: NoiseSchedule | None,
	clip: tuple[float, float] | None,
) -> dict[int, LocalUpdate]:
	def job(client: ClientState) -> Callable[[], LocalUpdate]:
		return lambda: local_update(
			client,
			global_params,
			config,
			round,
			client_rng.split(client.client_id).split(round),
			schedule=noise_schedule,
			clip=clip,
		)

	jobs = [job(clients[k]) for k in order]
	if config.parallel_clients:
		outcomes = asyncio.run(_gather_updates(jobs))
	else:
		outcomes = []
		for run in jobs:
			try:
				outcomes.append(run())
			except Exception as e:
				outcomes.append(e)
				break

	updates: dict[int, LocalUpdate] = {}
	for k, outcome in zip(order, outcomes, strict=False):
		if isinstance(outcome, BaseException):
			raise ExperimentError(round, k, str(outcome)) from outcome
		updates[k] = outcome
	return updates


def run_experiment(
	config: ExperimentConfig,
	schedule: ClientSchedule,
	dataset: Dataset,
	test_set: Dataset,
	*,
	checkpoint_dir: str | Path | None = None,
	client_order: Sequence[int] | None = None,
) -> list[RoundRecord]:
	"""Run the full-participation continual federated loop.

	Each round loads new session data at session boundaries, runs every client's local
	update, aggregates in client-id order and evaluates the new global model on the
	whole test set and on the part clients have encountered so far.

	Args:
		config: Validated experiment configuration.
		schedule: Per-client, per-session data assignment over `dataset`.
		dataset: Training data the schedule indexes into.
		test_set: Held-out evaluation data.
		checkpoint_dir: If given, a checkpoint is written there after every session.
		client_order: Order in which local updates are executed; results do not
			depend on it.

	Returns:
		list[RoundRecord]: One record per round.

	Raises:
		ConfigError: If config and schedule disagree on K, S or T.
		ExperimentError: If any step fails; names the round and, for local updates,
			the client.

	"""
	_check_consistency(config, schedule)
	K = config.num_clients
	order = list(range(K)) if client_order is None else list(client_order)
	if sorted(order) != list(range(K)):
		raise ConfigError("client_order", f"not a permutation of 0..{K - 1}")

	master = RngStream(config.seed)
	init_rng = master.split(INIT_STREAM)
	client_rng = master.split(CLIENT_STREAM)
	state = GlobalState(
		MlpParams.init(
			dataset.d_feat, config.hidden_width, dataset.num_classes, init_rng.split(0)
		)
	)
	clients = [
		ClientState.create(
			k, state.global_params, dataset, config, init_rng.split(1).split(k)
		)
		for k in range(K)
	]
	noise_schedule = make_linear_schedule(
		config.diffusion_steps, config.beta_start, config.beta_end
	)
	clip = (0.0, 1.0) if config.dataset.kind == "idx" else None
	encounter_key = EncounterKey.for_scenario(schedule.scenario)
	encountered: set[tuple[int, int]] = set()

	logger.info(
		"Running %s on %s: K=%d, S=%d, T=%d",
		config.method,
		schedule.scenario,
		K,
		config.num_sessions,
		config.rounds,
	)
	records: list[RoundRecord] = []
	for t in range(1, schedule.total_rounds + 1):
		started = time.perf_counter()
		s = schedule.session_of_round(t)
		state.round, state.session = t, s
		if schedule.is_session_start(t):
			for client in clients:
				try:
					load_session(
						client, dataset.subset(schedule.indices(client.client_id, s)), s
					)
				except Exception as e:
					raise ExperimentError(t, client.client_id, str(e)) from e
				encountered |= client.current_real.pairs()
			logger.info(
				"Session %d/%d starts at round %d", s + 1, schedule.num_sessions, t
			)

		updates = _run_local_updates(
			clients,
			order,
			state.global_params,
			config,
			t,
			client_rng,
			noise_schedule,
			clip,
		)
		try:
			flat = aggregate(
				[updates[k].params.flatten() for k in range(K)],
				[updates[k].num_samples for k in range(K)],
			)
			state.global_params = state.global_params.with_flat(flat)
			if schedule.is_session_end(t):
				for client in clients:
					end_session(client, state.global_params, config)
				if checkpoint_dir is not None:
					save_checkpoint(
						Path(checkpoint_dir) / f"session_{s + 1:02d}.npz",
						config,
						t,
						state.global_params,
						clients,
					)
			global_accuracy = eval_global_accuracy(state.global_params, test_set)
			encountered_accuracy = eval_encountered_accuracy(
				state.global_params, test_set, encountered, encounter_key
			)
		except ExperimentError:
			raise
		except Exception as e:
			raise ExperimentError(t, None, str(e)) from e

		losses = [updates[k].train_loss for k in range(K)]
		record = RoundRecord(
			round=t,
			session=s + 1,
			method=config.method,
			global_accuracy=global_accuracy,
			encountered_accuracy=encountered_accuracy,
			mean_train_loss=_mean_or_none(losses),
			synthetic_fidelity_kl=_mean_or_none([c.fidelity_kl for c in clients]),
			wall_time_s=time.perf_counter() - started,
			client_train_loss=losses,
		)
		records.append(record)
		logger.info(
			"Round %d/%d: accuracy %.4f, encountered %.4f",
			t,
			schedule.total_rounds,
			global_accuracy,
			encountered_accuracy,
		)
	return records
