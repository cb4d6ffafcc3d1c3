"""Client state and the local update of every supported method.

A client holds its target classifier, its conditional denoiser and the data of the
current session. DCFL clients additionally keep a cache of synthetic examples drawn
from the denoiser, regenerated when the session changes, and mix it into the
training set.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from fedreplay.core.experiment_config import ExperimentConfig, Method
from fedreplay.data import Dataset, iter_minibatches
from fedreplay.diffusion import NoiseSchedule, sample_reverse, train_diffusion
from fedreplay.errors import DomainError, PreconditionError
from fedreplay.flcore.methods import Regularizer, ewc_fisher_estimate, make_penalty
from fedreplay.flcore.metrics import synthetic_fidelity_kl
from fedreplay.models import DenoiserParams, MlpParams, cross_entropy_grad
from fedreplay.numkit import AdamState, RngStream, Vector, adam_step

logger = logging.getLogger(__name__)

# Child keys of the per-(client, round) stream. Keeping the target's draws on their
# own stream makes an empty replay cache reproduce FedAvg exactly.
TARGET_STREAM = 0
REPLAY_STREAM = 1
DIFFUSION_STREAM = 2


@dataclass
class ClientState:
	"""Everything one client carries between rounds.

	Attributes:
		client_id: Stable client index; per-round random streams are keyed by it.
		target_params: Target classifier after the client's latest local update.
		diffusion_params: The client's conditional denoiser.
		diffusion_opt: Adam state of the denoiser, kept across sessions.
		current_real: Real data of the current session.
		replay_cache: Synthetic examples mixed into training; empty in session 0.
		seen_pairs: `(class, domain)` pairs encountered in any session so far.
		previous_pairs: Pairs encountered in sessions before the current one.
		session: Current 0-based session, `-1` before the first load.
		ewc_anchor: Flat global parameters at the end of the previous session.
		ewc_fisher: Diagonal Fisher estimate at `ewc_anchor`.
		lwf_teacher: Global model at the end of the previous session.
		diffusion_trained: Whether the denoiser has been trained at least once.
		history_real: Real data of earlier sessions, used only by the fidelity
			diagnostic.
		fidelity_kl: Fidelity of the current replay cache, if it could be computed.
		last_train_loss: Last-epoch mean cross-entropy of the latest local update.

	"""

	client_id: int
	target_params: MlpParams
	diffusion_params: DenoiserParams
	diffusion_opt: AdamState
	current_real: Dataset
	replay_cache: Dataset
	seen_pairs: set[tuple[int, int]] = field(default_factory=set)
	previous_pairs: set[tuple[int, int]] = field(default_factory=set)
	session: int = -1
	ewc_anchor: Vector | None = None
	ewc_fisher: Vector | None = None
	lwf_teacher: MlpParams | None = None
	diffusion_trained: bool = False
	history_real: Dataset | None = None
	fidelity_kl: float | None = None
	last_train_loss: float = math.nan

	@classmethod
	def create(
		cls,
		client_id: int,
		global_params: MlpParams,
		dataset: Dataset,
		config: ExperimentConfig,
		rng: RngStream,
	) -> "ClientState":
		"""A client with no data yet and a freshly initialized denoiser."""
		denoiser = DenoiserParams.init(
			dataset.d_feat,
			dataset.num_classes,
			dataset.num_domains,
			rng,
			hidden=config.denoiser_hidden,
			time_dim=config.time_embedding_dim,
			cond_dim=config.cond_embedding_dim,
		)
		empty = Dataset.empty(dataset.d_feat, dataset.num_classes, dataset.num_domains)
		return cls(
			client_id=client_id,
			target_params=global_params,
			diffusion_params=denoiser,
			diffusion_opt=AdamState.zeros(denoiser.flatten().size, config.lr_diffusion),
			current_real=empty,
			replay_cache=empty,
		)

	@property
	def training_set(self) -> Dataset:
		"""Current real data followed by the replay cache."""
		return self.current_real.concat(self.replay_cache)


def load_session(client: ClientState, data: Dataset, session: int) -> None:
	"""Swap in the real data of `session` and clear the replay cache.

	Raises:
		PreconditionError: If `session` does not follow the client's current one.

	"""
	if session != client.session + 1:
		raise PreconditionError(
			f"client {client.client_id} cannot move from session {client.session} "
			f"to {session}"
		)
	if client.session >= 0:
		client.history_real = (
			client.current_real
			if client.history_real is None
			else client.history_real.concat(client.current_real)
		)
	client.previous_pairs = set(client.seen_pairs)
	client.seen_pairs |= data.pairs()
	client.current_real = data
	client.replay_cache = Dataset.empty(data.d_feat, data.num_classes, data.num_domains)
	client.fidelity_kl = None
	client.session = session


def replay_allocation(
	pairs: set[tuple[int, int]], total: int
) -> list[tuple[tuple[int, int], int]]:
	"""Split `total` uniformly over sorted `pairs`; the first pairs take the rest."""
	ordered = sorted(pairs)
	base, remainder = divmod(total, len(ordered))
	return [(pair, base + (i < remainder)) for i, pair in enumerate(ordered)]


def generate_replay(
	client: ClientState,
	schedule: NoiseSchedule,
	delta: float,
	rng: RngStream,
	clip: tuple[float, float] | None = None,
) -> Dataset:
	"""Synthetic examples of previously seen pairs, `round(delta * |real|)` in total.

	Args:
		client: Client whose denoiser and history condition the draw.
		schedule: Noise schedule the denoiser was trained with.
		delta: Replay scale, synthetic over real sample count.
		rng: Stream for reverse sampling.
		clip: Optional value range applied to generated features.

	Returns:
		Dataset: Examples ordered by `(class, domain)` pair.

	Raises:
		PreconditionError: In session 0, without previously seen pairs, or before
			the denoiser has been trained.
		DomainError: If `delta` is negative.

	"""
	if client.session < 1:
		raise PreconditionError("replay cannot be generated in the first session")
	if not client.previous_pairs:
		raise PreconditionError(f"client {client.client_id} has no earlier pairs")
	if not client.diffusion_trained:
		raise PreconditionError(f"client {client.client_id} denoiser is untrained")
	if delta < 0:
		raise DomainError(f"replay scale must be non-negative, got {delta}")
	real = client.current_real
	total = math.floor(delta * len(real) + 0.5)
	if total == 0:
		return Dataset.empty(real.d_feat, real.num_classes, real.num_domains)
	labels: list[int] = []
	domains: list[int] = []
	for (label, domain), count in replay_allocation(client.previous_pairs, total):
		labels.extend([label] * count)
		domains.extend([domain] * count)
	features = sample_reverse(
		client.diffusion_params, labels, domains, schedule, rng, clip=clip
	)
	return Dataset.from_arrays(
		features, labels, domains, real.num_classes, real.num_domains
	)


def train_target(
	params: MlpParams,
	data: Dataset,
	epochs: int,
	batch_size: int,
	learning_rate: float,
	rng: RngStream,
	penalty: Regularizer | None = None,
) -> tuple[MlpParams, float]:
	"""Mini-batch Adam on cross-entropy plus an optional penalty.

	Returns:
		tuple[MlpParams, float]: Trained parameters and the last epoch's mean
			cross-entropy (`nan` when nothing was trained).

	"""
	if epochs == 0 or len(data) == 0:
		return params, math.nan
	flat = params.flatten()
	opt = AdamState.zeros(flat.size, learning_rate)
	epoch_loss = math.nan
	for epoch in range(epochs):
		total = 0.0
		for batch in iter_minibatches(len(data), batch_size, rng):
			current = params.with_flat(flat)
			features = data.features[batch]
			loss, grad = cross_entropy_grad(current, features, data.labels[batch])
			if penalty is not None:
				grad = grad + penalty.grad(current, features)
			flat, opt = adam_step(opt, flat, grad)
			total += loss * len(batch)
		epoch_loss = total / len(data)
		logger.debug("Target epoch %d/%d loss %.5f", epoch + 1, epochs, epoch_loss)
	return params.with_flat(flat), epoch_loss


class LocalUpdate(NamedTuple):
	"""What a client sends back to the server after one round."""

	client_id: int
	params: MlpParams
	num_samples: int
	train_loss: float


def _refresh_replay(
	client: ClientState,
	config: ExperimentConfig,
	schedule: NoiseSchedule,
	rng: RngStream,
	clip: tuple[float, float] | None,
) -> None:
	client.replay_cache = generate_replay(
		client, schedule, config.replay_scale, rng, clip=clip
	)
	if client.history_real is None or len(client.replay_cache) == 0:
		return
	try:
		client.fidelity_kl = synthetic_fidelity_kl(
			client.history_real, client.replay_cache
		)
	except DomainError as e:
		logger.warning(
			"Client %d fidelity diagnostic skipped: %s", client.client_id, e
		)


def local_update(
	client: ClientState,
	global_params: MlpParams,
	config: ExperimentConfig,
	round: int,
	rng: RngStream,
	schedule: NoiseSchedule | None = None,
	clip: tuple[float, float] | None = None,
) -> LocalUpdate:
	"""Train the client's target model for one communication round.

	The target starts from `global_params` and trains for `config.local_epochs` on
	`current_real + replay_cache` with the method's penalty. DCFL clients refresh at
	the first round of each session (every round with `replay_per_round`): from the
	second session on they regenerate the replay cache, and they retrain the denoiser
	on the mixed training set.

	Args:
		client: Client to update in place.
		global_params: Global model of the previous round.
		config: Experiment configuration.
		round: 1-based communication round.
		rng: The client's stream for this round.
		schedule: Diffusion noise schedule; required for DCFL.
		clip: Feature range for generated samples.

	Returns:
		LocalUpdate: Trained parameters and the aggregation weight `|X_k|`.

	Raises:
		PreconditionError: If the client's data is not loaded for this round's session
			or DCFL runs without a noise schedule.

	"""
	session = (round - 1) // config.rounds_per_session
	if client.session != session:
		raise PreconditionError(
			f"client {client.client_id} holds session {client.session} data in round "
			f"{round}, expected session {session}"
		)
	refresh = config.method is Method.DCFL and (
		config.replay_per_round or (round - 1) % config.rounds_per_session == 0
	)
	if refresh:
		if schedule is None:
			raise PreconditionError("DCFL needs a diffusion noise schedule")
		if session >= 1:
			_refresh_replay(client, config, schedule, rng.split(REPLAY_STREAM), clip)

	training_set = client.training_set
	penalty = make_penalty(
		config, global_params, client.ewc_anchor, client.ewc_fisher, client.lwf_teacher
	)
	params, loss = train_target(
		global_params,
		training_set,
		config.local_epochs,
		config.batch_size,
		config.lr_target,
		rng.split(TARGET_STREAM),
		penalty,
	)
	client.target_params = params
	client.last_train_loss = loss

	if refresh and schedule is not None and len(training_set) > 0:
		result = train_diffusion(
			client.diffusion_params,
			training_set,
			schedule,
			config.diffusion_epochs,
			config.batch_size,
			client.diffusion_opt,
			rng.split(DIFFUSION_STREAM),
		)
		client.diffusion_params = result.params
		client.diffusion_opt = result.opt
		client.diffusion_trained = True
		if result.epoch_losses:
			logger.debug(
				"Client %d denoiser loss %.5f -> %.5f",
				client.client_id,
				result.epoch_losses[0],
				result.epoch_losses[-1],
			)
	return LocalUpdate(client.client_id, params, len(training_set), loss)


def end_session(
	client: ClientState, global_params: MlpParams, config: ExperimentConfig
) -> None:
	"""Record what EWC and LwF carry into the next session.

	EWC anchors at the session's final global model with the Fisher diagonal
	estimated on the session's training set; LwF freezes that model as its teacher.
	Both replace, rather than accumulate over, earlier sessions.
	"""
	match config.method:
		case Method.FEDAVG_EWC:
			training_set = client.training_set
			client.ewc_anchor = global_params.flatten()
			client.ewc_fisher = (
				ewc_fisher_estimate(global_params, training_set)
				if len(training_set)
				else np.zeros_like(client.ewc_anchor)
			)
		case Method.FEDAVG_LWF:
			client.lwf_teacher = global_params
		case _:
			pass
