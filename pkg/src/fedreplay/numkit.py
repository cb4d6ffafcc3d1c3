"""Numerical substrate: seeded RNG streams, Adam, gradient checking and KL utilities.

Vectors and matrices are plain float64 `numpy.ndarray`s. Every gradient in the package
is derived by hand, so `finite_diff_grad` and `relative_error` are the oracles the
test-suite and `fedreplay selftest` check them against.
"""

import math
from collections.abc import Callable
from dataclasses import dataclass, replace
from typing import Any

import numpy as np
import numpy.typing as npt

from fedreplay.errors import DimensionError, DomainError, NumericError

Vector = npt.NDArray[np.float64]
Matrix = npt.NDArray[np.float64]
IndexArray = npt.NDArray[np.int64]

SIMPLEX_TOLERANCE = 1e-9
COVARIANCE_RIDGE = 1e-6


def as_vector(values: Any) -> Vector:
	"""Return `values` as a contiguous float64 array (copying only when needed)."""
	return np.ascontiguousarray(values, dtype=np.float64)


def ensure_finite(values: npt.NDArray[np.float64], what: str) -> None:
	"""Raise `NumericError` if `values` holds NaN or infinity."""
	if not np.all(np.isfinite(values)):
		raise NumericError(f"non-finite values in {what}")


class RngStream:
	"""A splittable, single-owner random stream.

	A stream is identified by `(seed, path)`, where `path` is the tuple of integer keys
	that derived it from the root. Draws come from numpy's PCG64 seeded through
	`SeedSequence(seed, spawn_key=path)`, whose output is documented and
	platform-independent. Splitting depends only on the identity of the parent, never on
	how many draws the parent has already served.

	Concurrent use of one stream is not supported; split first.
	"""

	def __init__(self, seed: int, path: tuple[int, ...] = ()) -> None:
		"""Create the stream `(seed, path)`."""
		if seed < 0 or any(key < 0 for key in path):
			raise DomainError("seed and split keys must be non-negative integers")
		self._seed = seed
		self._path = path
		self._generator = np.random.Generator(
			np.random.PCG64(np.random.SeedSequence(seed, spawn_key=path))
		)

	@property
	def seed(self) -> int:
		"""Root seed of the stream family."""
		return self._seed

	@property
	def stream_id(self) -> tuple[int, ...]:
		"""Key path that derived this stream from the root."""
		return self._path

	@property
	def generator(self) -> np.random.Generator:
		"""Underlying numpy generator."""
		return self._generator

	def split(self, key: int) -> "RngStream":
		"""Derive the child stream labelled `key`."""
		return RngStream(self._seed, (*self._path, key))

	def normal(self, size: int | tuple[int, ...]) -> npt.NDArray[np.float64]:
		"""Draw standard-normal samples."""
		return self._generator.standard_normal(size)

	def uniform(
		self, low: float, high: float, size: int | tuple[int, ...]
	) -> npt.NDArray[np.float64]:
		"""Draw uniform samples on `[low, high)`."""
		return self._generator.uniform(low, high, size)

	def integers(
		self, low: int, high: int, size: int | tuple[int, ...]
	) -> npt.NDArray[np.int64]:
		"""Draw integers on `[low, high)`."""
		return self._generator.integers(low, high, size, dtype=np.int64)

	def permutation(self, n: int) -> IndexArray:
		"""Return a random permutation of `range(n)`."""
		return self._generator.permutation(n).astype(np.int64)

	def __repr__(self) -> str:
		"""Show the stream identity."""
		return f"RngStream(seed={self._seed}, path={self._path})"


def split_rng(parent: RngStream, key: int) -> RngStream:
	"""Derive a deterministic child stream of `parent` labelled by `key`."""
	return parent.split(key)


@dataclass(frozen=True)
class AdamState:
	"""Moments and hyper-parameters of Adam tracking one parameter vector."""

	first_moment: Vector
	second_moment: Vector
	step_count: int = 0
	learning_rate: float = 1e-4
	beta1: float = 0.9
	beta2: float = 0.999
	epsilon: float = 1e-8

	@classmethod
	def zeros(cls, size: int, learning_rate: float = 1e-4) -> "AdamState":
		"""Fresh state for a parameter vector of length `size`."""
		return cls(
			first_moment=np.zeros(size),
			second_moment=np.zeros(size),
			learning_rate=learning_rate,
		)


def adam_step(
	state: AdamState, params: Vector, grad: Vector
) -> tuple[Vector, AdamState]:
	"""Apply one bias-corrected Adam update.

	Args:
		state: Optimizer state for `params`.
		params: Current parameter vector.
		grad: Gradient of the objective at `params`.

	Returns:
		tuple[Vector, AdamState]: The updated parameters and optimizer state. Inputs are
			not modified.

	Raises:
		DimensionError: If `grad`, `params` and the moments differ in length.
		NumericError: If `grad` holds non-finite entries.

	"""
	params = as_vector(params)
	grad = as_vector(grad)
	if grad.shape != params.shape or state.first_moment.shape != params.shape:
		raise DimensionError(
			f"adam_step: params {params.shape}, grad {grad.shape}, "
			f"moments {state.first_moment.shape}"
		)
	ensure_finite(grad, "adam_step gradient")

	step = state.step_count + 1
	first = state.beta1 * state.first_moment + (1.0 - state.beta1) * grad
	second = state.beta2 * state.second_moment + (1.0 - state.beta2) * grad * grad
	first_hat = first / (1.0 - state.beta1**step)
	second_hat = second / (1.0 - state.beta2**step)
	updated = params - state.learning_rate * first_hat / (
		np.sqrt(second_hat) + state.epsilon
	)
	return updated, replace(
		state, first_moment=first, second_moment=second, step_count=step
	)


def finite_diff_grad(
	loss_fn: Callable[[Vector], float], params: Vector, h: float = 1e-5
) -> Vector:
	"""Central-difference gradient of `loss_fn` at `params`.

	Raises:
		DomainError: If `h` is not positive.
		NumericError: If any loss evaluation is non-finite.

	"""
	if h <= 0:
		raise DomainError(f"finite_diff_grad: step must be positive, got {h}")
	params = as_vector(params).copy()
	grad = np.empty_like(params)
	for i in range(params.size):
		original = params.flat[i]
		params.flat[i] = original + h
		upper = float(loss_fn(params))
		params.flat[i] = original - h
		lower = float(loss_fn(params))
		params.flat[i] = original
		if not (math.isfinite(upper) and math.isfinite(lower)):
			raise NumericError(f"finite_diff_grad: non-finite loss at coordinate {i}")
		grad.flat[i] = (upper - lower) / (2.0 * h)
	return grad


def relative_error(analytic: Vector, numeric: Vector) -> float:
	"""Symmetric relative error `|a - n| / max(|a| + |n|, 1e-12)` in the L2 norm."""
	analytic = as_vector(analytic)
	numeric = as_vector(numeric)
	if analytic.shape != numeric.shape:
		raise DimensionError(f"relative_error: {analytic.shape} vs {numeric.shape}")
	scale = max(float(np.linalg.norm(analytic) + np.linalg.norm(numeric)), 1e-12)
	return float(np.linalg.norm(analytic - numeric)) / scale


def _check_simplex(p: Vector, name: str) -> None:
	if p.ndim != 1 or p.size == 0:
		raise DomainError(f"{name} must be a non-empty 1-D probability vector")
	if np.any(p < 0) or abs(float(p.sum()) - 1.0) > SIMPLEX_TOLERANCE:
		raise DomainError(f"{name} is not on the probability simplex")


def kl_discrete(p: Vector, q: Vector) -> float:
	"""KL divergence `sum p_i ln(p_i / q_i)` in nats.

	Terms with `p_i = 0` contribute nothing. If some `p_i > 0` meets `q_i = 0` the
	divergence is unbounded and `math.inf` is returned.

	Raises:
		DomainError: If the vectors differ in length or are not on the simplex.

	"""
	p = as_vector(p)
	q = as_vector(q)
	if p.shape != q.shape:
		raise DomainError(f"kl_discrete: length mismatch {p.shape} vs {q.shape}")
	_check_simplex(p, "p")
	_check_simplex(q, "q")

	support = p > 0
	if np.any(q[support] == 0):
		return math.inf
	value = float(np.sum(p[support] * np.log(p[support] / q[support])))
	return max(value, 0.0)


def _moments(sample: Matrix, ridge: float) -> tuple[Vector, Matrix]:
	mean = sample.mean(axis=0)
	cov = np.atleast_2d(np.cov(sample, rowvar=False, ddof=1))
	return mean, cov + ridge * np.eye(sample.shape[1])


def kl_gaussian_moment(
	sample_a: Matrix, sample_b: Matrix, ridge: float = COVARIANCE_RIDGE
) -> float:
	"""KL divergence between Gaussians moment-matched to two samples.

	Args:
		sample_a: Points of shape `(n_a, d)`; 1-D input is read as `d = 1`.
		sample_b: Points of shape `(n_b, d)`.
		ridge: Diagonal regularizer added to both fitted covariances.

	Returns:
		float: `KL(N(mu_a, S_a) || N(mu_b, S_b))` in nats.

	Raises:
		DomainError: If either sample has fewer than `d + 2` points or the
			dimensions differ.

	"""
	a = as_vector(sample_a)
	b = as_vector(sample_b)
	if a.ndim == 1:
		a = a[:, None]
	if b.ndim == 1:
		b = b[:, None]
	if a.shape[1] != b.shape[1]:
		raise DomainError(f"kl_gaussian_moment: dims {a.shape[1]} vs {b.shape[1]}")
	dim = a.shape[1]
	if a.shape[0] < dim + 2 or b.shape[0] < dim + 2:
		raise DomainError(
			f"kl_gaussian_moment: need at least {dim + 2} points per sample, "
			f"got {a.shape[0]} and {b.shape[0]}"
		)

	mean_a, cov_a = _moments(a, ridge)
	mean_b, cov_b = _moments(b, ridge)
	diff = mean_b - mean_a
	trace_term = float(np.trace(np.linalg.solve(cov_b, cov_a)))
	mahalanobis = float(diff @ np.linalg.solve(cov_b, diff))
	_, logdet_a = np.linalg.slogdet(cov_a)
	_, logdet_b = np.linalg.slogdet(cov_b)
	value = 0.5 * (trace_term + mahalanobis - dim + float(logdet_b - logdet_a))
	return max(value, 0.0)
