"""Brute-force check of the KL bound behind generative replay.

Mixing replayed data into the real stream gives the training distribution
`(q1 + delta * q2) / (1 + delta)`, where `q1` is the shifted real distribution and
`q2` the synthetic one. Convexity of KL in its second argument bounds the divergence
of any target `p` from that mixture by the weighted divergences from its parts. With
the shift bound taken as tight, `Delta = KL(p || q1)`, the inequality is

	KL(p || mix) <= (Delta + delta * KL(p || q2)) / (1 + delta)

and `delta = 1` gives the even-mixture form.
"""

import logging
from dataclasses import dataclass

import numpy as np

from fedreplay.errors import DomainError
from fedreplay.numkit import RngStream, Vector, as_vector, kl_discrete

logger = logging.getLogger(__name__)

MIN_MASS = 1e-6
SLACK_TOLERANCE = 1e-9


@dataclass(frozen=True)
class Theorem1Report:
	"""Outcome of `theorem1_check`; slack is `rhs - lhs` per trial."""

	trials: int
	violations: int
	max_slack: float
	min_slack: float
	mean_slack: float

	@property
	def passed(self) -> bool:
		"""Whether no trial violated the bound."""
		return self.violations == 0


def theorem1_bound(
	p: Vector, q1: Vector, q2: Vector, delta: float = 1.0
) -> tuple[float, float]:
	"""Both sides of the mixture bound for one simplex triple.

	Returns:
		tuple[float, float]: `(KL(p || mix), (KL(p || q1) + delta * KL(p || q2)) /
			(1 + delta))`.

	Raises:
		DomainError: If `delta < 0` or an input is not a probability vector.

	"""
	if delta < 0:
		raise DomainError(f"delta must be non-negative, got {delta}")
	p, q1, q2 = as_vector(p), as_vector(q1), as_vector(q2)
	mix = (q1 + delta * q2) / (1.0 + delta)
	lhs = kl_discrete(p, mix)
	shift = kl_discrete(p, q1)
	rhs = (shift + delta * kl_discrete(p, q2)) / (1.0 + delta)
	return lhs, rhs


def _random_simplex(rng: RngStream, dim: int) -> Vector:
	raw = rng.generator.dirichlet(np.ones(dim))
	return MIN_MASS + (1.0 - dim * MIN_MASS) * raw


def theorem1_check(
	trials: int,
	max_dim: int,
	rng: RngStream,
	delta: float = 1.0,
	tolerance: float = SLACK_TOLERANCE,
) -> Theorem1Report:
	"""Evaluate the bound on random simplex triples and count violations.

	Each trial draws a dimension in `[2, max_dim]` and three Dirichlet(1) points whose
	entries are all at least `1e-6`.

	Raises:
		DomainError: If `trials < 1` or `max_dim < 2`.

	"""
	if trials < 1:
		raise DomainError(f"trials must be positive, got {trials}")
	if max_dim < 2:
		raise DomainError(f"max_dim must be at least 2, got {max_dim}")
	dims = rng.integers(2, max_dim + 1, trials)
	slacks = np.empty(trials)
	violations = 0
	for trial, dim in enumerate(dims.tolist()):
		p, q1, q2 = (_random_simplex(rng, dim) for _ in range(3))
		lhs, rhs = theorem1_bound(p, q1, q2, delta)
		slacks[trial] = rhs - lhs
		if lhs > rhs + tolerance:
			violations += 1
			logger.warning("Bound violated in trial %d: lhs=%r rhs=%r", trial, lhs, rhs)
	return Theorem1Report(
		trials=trials,
		violations=violations,
		max_slack=float(slacks.max()),
		min_slack=float(slacks.min()),
		mean_slack=float(slacks.mean()),
	)
