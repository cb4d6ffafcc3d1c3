"""Denoising diffusion: noise schedule, forward corruption, loss, sampling, training.

Conventions follow the usual DDPM notation with 1-based steps `n = 1..N`:
`alpha_n = 1 - beta_n` and `alpha_bar_n = prod_{s <= n} alpha_s`, so the forward
marginal is `x_n = sqrt(alpha_bar_n) x_0 + sqrt(1 - alpha_bar_n) eps`. The reverse
variance is fixed to `beta_n I`.
"""

import logging
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from fedreplay.data import Dataset, iter_minibatches
from fedreplay.errors import DomainError, NumericError
from fedreplay.models import DenoiserParams, denoiser_backprop, denoiser_pass
from fedreplay.numkit import (
	AdamState,
	IndexArray,
	Matrix,
	RngStream,
	Vector,
	adam_step,
	as_vector,
)

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
	"""Per-step corruption variances and their derived products.

	Arrays are indexed `n - 1` for step `n`.
	"""

	beta: Vector
	alpha: Vector
	alpha_bar: Vector

	@property
	def num_steps(self) -> int:
		"""Total number of diffusion steps `N`."""
		return int(self.beta.size)

	def check_steps(self, steps: IndexArray | int) -> IndexArray:
		"""Validate steps against `[1, N]` and return them as an index array."""
		step_array = np.atleast_1d(np.asarray(steps, dtype=np.int64))
		if np.any(step_array < 1) or np.any(step_array > self.num_steps):
			raise DomainError(f"diffusion step outside [1, {self.num_steps}]")
		return step_array


def make_linear_schedule(
	N: int = 200, beta_start: float = 1e-4, beta_end: float = 0.02
) -> NoiseSchedule:
	"""Linearly spaced `beta` from `beta_start` to `beta_end` inclusive.

	Raises:
		DomainError: Unless `N >= 1` and `0 < beta_start <= beta_end < 1`.

	"""
	if N < 1 or not 0.0 < beta_start <= beta_end < 1.0:
		raise DomainError(
			f"invalid schedule N={N}, beta_start={beta_start}, beta_end={beta_end}"
		)
	beta = np.linspace(beta_start, beta_end, N)
	alpha = 1.0 - beta
	return NoiseSchedule(beta, alpha, np.cumprod(alpha))


def forward_sample(
	x0: Vector | Matrix,
	n: int | IndexArray,
	eps: Vector | Matrix,
	schedule: NoiseSchedule,
) -> Vector | Matrix:
	"""Closed-form forward marginal sample at step `n`.

	`x0` may be one vector with scalar `n`, or a batch `(B, d)` with one step per row.

	Raises:
		DomainError: If a step is outside `[1, N]` or `eps` does not match `x0`.

	"""
	x0 = as_vector(x0)
	eps = as_vector(eps)
	if eps.shape != x0.shape:
		raise DomainError(f"noise shape {eps.shape} does not match data {x0.shape}")
	steps = schedule.check_steps(n)
	alpha_bar = schedule.alpha_bar[steps - 1]
	if x0.ndim == 2:
		alpha_bar = alpha_bar[:, None]
	else:
		alpha_bar = alpha_bar[0]
	return np.sqrt(alpha_bar) * x0 + np.sqrt(1.0 - alpha_bar) * eps


def forward_kernel_step(
	x_prev: Vector | Matrix, n: int, z: Vector | Matrix, schedule: NoiseSchedule
) -> Vector | Matrix:
	"""One forward-chain step, `x_n = sqrt(1 - beta_n) x_{n-1} + sqrt(beta_n) z`."""
	beta = schedule.beta[int(schedule.check_steps(n)[0]) - 1]
	return math.sqrt(1.0 - beta) * as_vector(x_prev) + math.sqrt(beta) * as_vector(z)


def epsilon_mse(eps_hat: Matrix, eps: Matrix) -> float:
	"""Mean over rows of the squared noise-prediction error."""
	diff = np.atleast_2d(eps_hat) - np.atleast_2d(eps)
	return float((diff * diff).sum(axis=1).mean())


def _conditioning_domains(
	params: DenoiserParams, domains: IndexArray
) -> IndexArray | None:
	return domains if params.domain_emb is not None else None


def diffusion_loss_grad_fixed(
	params: DenoiserParams,
	features: Matrix,
	labels: IndexArray,
	domains: IndexArray,
	steps: IndexArray,
	noise: Matrix,
	schedule: NoiseSchedule,
) -> tuple[float, Vector]:
	"""Noise-prediction loss and gradient for given steps and noise draws."""
	if len(labels) == 0:
		raise DomainError("diffusion loss needs a non-empty batch")
	x_noisy = forward_sample(features, steps, noise, schedule)
	eps_hat, cache = denoiser_pass(
		params, x_noisy, steps, labels, _conditioning_domains(params, domains)
	)
	diff = eps_hat - noise
	loss = float((diff * diff).sum(axis=1).mean())
	return loss, denoiser_backprop(params, cache, 2.0 * diff / len(labels))


def diffusion_loss_grad(
	params: DenoiserParams, batch: Dataset, schedule: NoiseSchedule, rng: RngStream
) -> tuple[float, Vector]:
	"""Noise-prediction loss over `batch` with fresh per-example `(n, eps)` draws.

	Each example gets `n ~ U{1..N}` and `eps ~ N(0, I)`. The loss is the batch mean of
	`||eps - eps_hat(x_n, n, y[, domain])||^2`.

	Raises:
		DomainError: If `batch` is empty.

	"""
	if len(batch) == 0:
		raise DomainError("diffusion loss needs a non-empty batch")
	steps = rng.integers(1, schedule.num_steps + 1, len(batch))
	noise = rng.normal((len(batch), batch.d_feat))
	return diffusion_loss_grad_fixed(
		params, batch.features, batch.labels, batch.domains, steps, noise, schedule
	)


def sample_reverse(
	params: DenoiserParams,
	labels: IndexArray | list[int],
	domains: IndexArray | list[int] | None,
	schedule: NoiseSchedule,
	rng: RngStream,
	clip: tuple[float, float] | None = None,
) -> Matrix:
	"""Ancestral sampling from pure noise, one output row per requested label.

	Starts from `x_N ~ N(0, I)` and iterates
	`x_{n-1} = (x_n - (1 - alpha_n) / sqrt(1 - alpha_bar_n) * eps_hat) / sqrt(alpha_n)
	+ sqrt(beta_n) z`, with `z ~ N(0, I)` for `n > 1` and `z = 0` at `n = 1`.

	Args:
		params: Trained denoiser.
		labels: Class condition for each output.
		domains: Domain condition for each output, used only by domain-conditioned
			denoisers.
		schedule: Noise schedule the denoiser was trained with.
		rng: Stream for the initial noise and per-step noise, drawn in order.
		clip: Optional `(low, high)` range applied to the final samples only.

	Returns:
		Matrix: Samples of shape `(len(labels), d_feat)`.

	Raises:
		NumericError: If an intermediate state becomes non-finite; names the step.

	"""
	label_array = np.asarray(labels, dtype=np.int64)
	domain_array = None if domains is None else np.asarray(domains, dtype=np.int64)
	if params.domain_emb is None:
		domain_array = None
	count = len(label_array)
	x = rng.normal((count, params.d_feat))
	if count == 0:
		return x
	for n in range(schedule.num_steps, 0, -1):
		steps = np.full(count, n, dtype=np.int64)
		eps_hat, _ = denoiser_pass(params, x, steps, label_array, domain_array)
		alpha = schedule.alpha[n - 1]
		alpha_bar = schedule.alpha_bar[n - 1]
		coef = (1.0 - alpha) / math.sqrt(1.0 - alpha_bar)
		x = (x - coef * eps_hat) / math.sqrt(alpha)
		if n > 1:
			x = x + math.sqrt(schedule.beta[n - 1]) * rng.normal(x.shape)
		if not np.all(np.isfinite(x)):
			raise NumericError(f"reverse sampling diverged at step {n}")
	if clip is not None:
		x = np.clip(x, clip[0], clip[1])
	return x


class DiffusionTrainResult(NamedTuple):
	"""Outcome of `train_diffusion`."""

	params: DenoiserParams
	opt: AdamState
	epoch_losses: list[float]


def train_diffusion(
	params: DenoiserParams,
	data: Dataset,
	schedule: NoiseSchedule,
	epochs: int,
	batch_size: int,
	opt: AdamState,
	rng: RngStream,
) -> DiffusionTrainResult:
	"""Mini-batch Adam on the noise-prediction loss for `epochs` shuffled epochs.

	Raises:
		DomainError: If `data` is empty.

	"""
	if len(data) == 0:
		raise DomainError("cannot train the diffusion model on empty data")
	flat = params.flatten()
	losses: list[float] = []
	for epoch in range(epochs):
		total = 0.0
		for batch in iter_minibatches(len(data), batch_size, rng):
			current = params.with_flat(flat)
			steps = rng.integers(1, schedule.num_steps + 1, len(batch))
			noise = rng.normal((len(batch), data.d_feat))
			loss, grad = diffusion_loss_grad_fixed(
				current,
				data.features[batch],
				data.labels[batch],
				data.domains[batch],
				steps,
				noise,
				schedule,
			)
			flat, opt = adam_step(opt, flat, grad)
			total += loss * len(batch)
		losses.append(total / len(data))
		logger.debug("Diffusion epoch %d/%d loss %.5f", epoch + 1, epochs, losses[-1])
	if epochs == 0:
		return DiffusionTrainResult(params, opt, losses)
	return DiffusionTrainResult(params.with_flat(flat), opt, losses)
