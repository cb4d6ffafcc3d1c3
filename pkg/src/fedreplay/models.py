"""Target classifier and conditional denoiser with hand-derived gradients.

Both parameter sets are frozen dataclasses of numpy arrays with a stable flat view
(`flatten` / `with_flat`), which is what aggregation, Adam and the regularizers
operate on.
"""

import math
from dataclasses import dataclass, fields

import numpy as np

from fedreplay.data import Dataset
from fedreplay.errors import DimensionError, DomainError
from fedreplay.numkit import IndexArray, Matrix, RngStream, Vector, as_vector

TIME_EMBEDDING_BASE = 10000.0


def _glorot(rng: RngStream, fan_in: int, fan_out: int) -> Matrix:
	limit = math.sqrt(6.0 / (fan_in + fan_out))
	return rng.uniform(-limit, limit, (fan_in, fan_out))


def _flatten(arrays: list[np.ndarray]) -> Vector:
	return np.concatenate([array.ravel() for array in arrays])


def _unflatten(flat: Vector, shapes: list[tuple[int, ...]]) -> list[np.ndarray]:
	flat = as_vector(flat)
	expected = sum(math.prod(shape) for shape in shapes)
	if flat.shape != (expected,):
		raise DimensionError(
			f"flat view has shape {flat.shape}, expected ({expected},)"
		)
	arrays, offset = [], 0
	for shape in shapes:
		size = math.prod(shape)
		arrays.append(flat[offset : offset + size].reshape(shape).copy())
		offset += size
	return arrays


# --- Classifier ---
@dataclass(frozen=True, eq=False)
class MlpParams:
	"""Weights of the `[d_feat -> H -> C]` tanh classifier."""

	w1: Matrix
	b1: Vector
	w2: Matrix
	b2: Vector

	@property
	def d_feat(self) -> int:
		"""Input dimension."""
		return int(self.w1.shape[0])

	@property
	def hidden(self) -> int:
		"""Hidden width `H`."""
		return int(self.w1.shape[1])

	@property
	def num_classes(self) -> int:
		"""Number of output classes `C`."""
		return int(self.w2.shape[1])

	@staticmethod
	def flat_size(d_feat: int, hidden: int, num_classes: int) -> int:
		"""Length of the flat view."""
		return d_feat * hidden + hidden + hidden * num_classes + num_classes

	@classmethod
	def zeros(cls, d_feat: int, hidden: int, num_classes: int) -> "MlpParams":
		"""All-zero parameters."""
		return cls(
			np.zeros((d_feat, hidden)),
			np.zeros(hidden),
			np.zeros((hidden, num_classes)),
			np.zeros(num_classes),
		)

	@classmethod
	def init(
		cls, d_feat: int, hidden: int, num_classes: int, rng: RngStream
	) -> "MlpParams":
		"""Glorot-uniform weights, zero biases."""
		return cls(
			_glorot(rng, d_feat, hidden),
			np.zeros(hidden),
			_glorot(rng, hidden, num_classes),
			np.zeros(num_classes),
		)

	def shapes(self) -> list[tuple[int, ...]]:
		"""Array shapes in flat-view order."""
		return [getattr(self, f.name).shape for f in fields(self)]

	def flatten(self) -> Vector:
		"""Flat view in the order `w1, b1, w2, b2`."""
		return _flatten([self.w1, self.b1, self.w2, self.b2])

	def with_flat(self, flat: Vector) -> "MlpParams":
		"""Parameters of this architecture holding the values in `flat`."""
		return MlpParams(*_unflatten(flat, self.shapes()))


def mlp_activations(params: MlpParams, features: Matrix) -> tuple[Matrix, Matrix]:
	"""Hidden activations and logits of a batch `(B, d)`."""
	hidden = np.tanh(features @ params.w1 + params.b1)
	return hidden, hidden @ params.w2 + params.b2


def _as_batch(features: Vector | Matrix, d_feat: int) -> tuple[Matrix, bool]:
	x = as_vector(features)
	single = x.ndim == 1
	batch = np.atleast_2d(x)
	if batch.ndim != 2 or batch.shape[1] != d_feat:
		raise DimensionError(f"expected {d_feat} features, got shape {x.shape}")
	return batch, single


def mlp_forward(params: MlpParams, features: Vector | Matrix) -> Vector | Matrix:
	"""Logits of one feature vector `(d,)` or a batch `(B, d)`."""
	batch, single = _as_batch(features, params.d_feat)
	_, logits = mlp_activations(params, batch)
	return logits[0] if single else logits


def log_softmax(logits: Matrix) -> Matrix:
	"""Row-wise log-softmax, stable under large logits."""
	shifted = logits - logits.max(axis=-1, keepdims=True)
	return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def softmax(logits: Matrix) -> Matrix:
	"""Row-wise softmax."""
	return np.exp(log_softmax(logits))


def softmax_cross_entropy(logits: Matrix, labels: IndexArray) -> float:
	"""Mean cross-entropy of `logits` against integer `labels`."""
	logits = np.atleast_2d(logits)
	log_probs = log_softmax(logits)
	return float(-log_probs[np.arange(len(labels)), labels].mean())


def mlp_backprop(
	params: MlpParams, features: Matrix, hidden: Matrix, dlogits: Matrix
) -> Vector:
	"""Flat gradient of a loss whose logit gradient is `dlogits`.

	`hidden` must be the tanh activations the forward pass produced for `features`.
	"""
	grad_w2 = hidden.T @ dlogits
	grad_b2 = dlogits.sum(axis=0)
	dpre = (dlogits @ params.w2.T) * (1.0 - hidden * hidden)
	grad_w1 = features.T @ dpre
	grad_b1 = dpre.sum(axis=0)
	return _flatten([grad_w1, grad_b1, grad_w2, grad_b2])


def cross_entropy_grad(
	params: MlpParams, features: Matrix, labels: IndexArray
) -> tuple[float, Vector]:
	"""Mean softmax cross-entropy and its flat gradient over array inputs."""
	if len(labels) == 0:
		raise DomainError("cross-entropy needs a non-empty batch")
	batch, _ = _as_batch(features, params.d_feat)
	hidden, logits = mlp_activations(params, batch)
	log_probs = log_softmax(logits)
	rows = np.arange(len(labels))
	loss = float(-log_probs[rows, labels].mean())
	dlogits = np.exp(log_probs)
	dlogits[rows, labels] -= 1.0
	dlogits /= len(labels)
	return loss, mlp_backprop(params, batch, hidden, dlogits)


def mlp_loss_grad(params: MlpParams, batch: Dataset) -> tuple[float, Vector]:
	"""Mean softmax cross-entropy over `batch` and its gradient.

	Raises:
		DomainError: If `batch` is empty.
		DimensionError: If the feature dimension does not match.

	"""
	return cross_entropy_grad(params, batch.features, batch.labels)


def mlp_fisher_diagonal(
	params: MlpParams, features: Matrix, labels: IndexArray
) -> Vector:
	"""Mean of squared per-example cross-entropy gradients, as a flat vector."""
	if len(labels) == 0:
		raise DomainError("Fisher estimate needs at least one example")
	batch, _ = _as_batch(features, params.d_feat)
	hidden, logits = mlp_activations(params, batch)
	dlogits = softmax(logits)
	dlogits[np.arange(len(labels)), labels] -= 1.0
	dpre = (dlogits @ params.w2.T) * (1.0 - hidden * hidden)
	n = len(labels)
	# Per-example gradients are outer products, so their squares factorize.
	return _flatten(
		[
			(batch * batch).T @ (dpre * dpre) / n,
			(dpre * dpre).mean(axis=0),
			(hidden * hidden).T @ (dlogits * dlogits) / n,
			(dlogits * dlogits).mean(axis=0),
		]
	)


def predict(params: MlpParams, features: Vector) -> int:
	"""Arg-max class of one feature vector; ties go to the lowest index."""
	return int(np.argmax(mlp_forward(params, features)))


def predict_batch(params: MlpParams, features: Matrix) -> IndexArray:
	"""Arg-max classes of a batch `(B, d)`."""
	batch, _ = _as_batch(features, params.d_feat)
	_, logits = mlp_activations(params, batch)
	return np.argmax(logits, axis=1).astype(np.int64)


# --- Denoiser ---
@dataclass(frozen=True, eq=False)
class DenoiserParams:
	"""Conditional MLP predicting the noise added to a feature vector.

	The input is `[x_noisy, time_embedding(n), class_emb[y] (+ domain_emb[dom])]`,
	followed by an input projection and two hidden layers (all tanh) and a linear head.
	`domain_emb` is `None` when the data has a single domain.
	"""

	w_in: Matrix
	b_in: Vector
	w_h1: Matrix
	b_h1: Vector
	w_h2: Matrix
	b_h2: Vector
	w_out: Matrix
	b_out: Vector
	class_emb: Matrix
	domain_emb: Matrix | None
	time_dim: int

	@property
	def d_feat(self) -> int:
		"""Feature dimension of inputs and outputs."""
		return int(self.w_out.shape[1])

	@property
	def hidden(self) -> int:
		"""Hidden width `H_den`."""
		return int(self.w_in.shape[1])

	@property
	def cond_dim(self) -> int:
		"""Condition embedding width."""
		return int(self.class_emb.shape[1])

	@property
	def num_classes(self) -> int:
		"""Rows of the class embedding table."""
		return int(self.class_emb.shape[0])

	def _arrays(self) -> list[np.ndarray]:
		arrays = [
			self.w_in,
			self.b_in,
			self.w_h1,
			self.b_h1,
			self.w_h2,
			self.b_h2,
			self.w_out,
			self.b_out,
			self.class_emb,
		]
		if self.domain_emb is not None:
			arrays.append(self.domain_emb)
		return arrays

	def shapes(self) -> list[tuple[int, ...]]:
		"""Array shapes in flat-view order."""
		return [array.shape for array in self._arrays()]

	def flatten(self) -> Vector:
		"""Flat view; the domain table, when present, comes last."""
		return _flatten(self._arrays())

	def with_flat(self, flat: Vector) -> "DenoiserParams":
		"""Parameters of this architecture holding the values in `flat`."""
		arrays = _unflatten(flat, self.shapes())
		domain_emb = arrays[9] if self.domain_emb is not None else None
		return DenoiserParams(*arrays[:9], domain_emb, self.time_dim)

	@classmethod
	def init(
		cls,
		d_feat: int,
		num_classes: int,
		num_domains: int,
		rng: RngStream,
		hidden: int = 128,
		time_dim: int = 16,
		cond_dim: int = 16,
	) -> "DenoiserParams":
		"""Glorot-uniform weights and embeddings, zero biases.

		A domain table is created only when `num_domains > 1`.
		"""
		if time_dim % 2:
			raise DomainError(f"time embedding dimension must be even, got {time_dim}")
		return cls(
			_glorot(rng, d_feat + time_dim + cond_dim, hidden),
			np.zeros(hidden),
			_glorot(rng, hidden, hidden),
			np.zeros(hidden),
			_glorot(rng, hidden, hidden),
			np.zeros(hidden),
			_glorot(rng, hidden, d_feat),
			np.zeros(d_feat),
			_glorot(rng, num_classes, cond_dim),
			_glorot(rng, num_domains, cond_dim) if num_domains > 1 else None,
			time_dim,
		)

	def zeros_like(self) -> "DenoiserParams":
		"""All-zero parameters of the same architecture."""
		return self.with_flat(np.zeros_like(self.flatten()))


def time_embedding(steps: IndexArray | int, dim: int) -> Matrix:
	"""Sinusoidal embedding of diffusion steps, shape `(len(steps), dim)`."""
	step_array = np.atleast_1d(np.asarray(steps, dtype=np.float64))
	half = dim // 2
	freqs = np.exp(-math.log(TIME_EMBEDDING_BASE) * np.arange(half) / half)
	args = step_array[:, None] * freqs[None, :]
	return np.concatenate([np.sin(args), np.cos(args)], axis=1)


@dataclass(frozen=True)
class DenoiserCache:
	"""Activations of one denoiser forward pass, kept for backprop."""

	inputs: Matrix
	a0: Matrix
	a1: Matrix
	a2: Matrix
	labels: IndexArray
	domains: IndexArray | None


def denoiser_pass(
	params: DenoiserParams,
	x_noisy: Matrix,
	steps: IndexArray,
	labels: IndexArray,
	domains: IndexArray | None,
) -> tuple[Matrix, DenoiserCache]:
	"""Forward pass over array inputs; returns the output and the backprop cache."""
	if x_noisy.ndim != 2 or x_noisy.shape[1] != params.d_feat:
		raise DimensionError(
			f"denoiser expects {params.d_feat} features, got shape {x_noisy.shape}"
		)
	if np.any(steps < 1):
		raise DomainError("diffusion steps start at 1")
	if np.any(labels < 0) or np.any(labels >= params.num_classes):
		raise DomainError("label outside the class embedding table")
	cond = params.class_emb[labels]
	if params.domain_emb is not None:
		if domains is None:
			raise DomainError("this denoiser is domain-conditioned; domains required")
		if np.any(domains < 0) or np.any(domains >= params.domain_emb.shape[0]):
			raise DomainError("domain outside the domain embedding table")
		cond = cond + params.domain_emb[domains]
	else:
		domains = None

	inputs = np.concatenate(
		[x_noisy, time_embedding(steps, params.time_dim), cond], axis=1
	)
	a0 = np.tanh(inputs @ params.w_in + params.b_in)
	a1 = np.tanh(a0 @ params.w_h1 + params.b_h1)
	a2 = np.tanh(a1 @ params.w_h2 + params.b_h2)
	out = a2 @ params.w_out + params.b_out
	return out, DenoiserCache(inputs, a0, a1, a2, labels, domains)


def denoiser_forward_batch(
	params: DenoiserParams,
	x_noisy: Matrix,
	steps: IndexArray,
	labels: IndexArray,
	domains: IndexArray | None = None,
) -> Matrix:
	"""Predicted noise for a batch `(B, d)` with per-row steps and conditions."""
	out, _ = denoiser_pass(
		params,
		as_vector(x_noisy),
		np.asarray(steps, dtype=np.int64),
		np.asarray(labels, dtype=np.int64),
		None if domains is None else np.asarray(domains, dtype=np.int64),
	)
	return out


def denoiser_forward(
	params: DenoiserParams,
	x_noisy: Vector,
	step: int,
	label: int,
	domain: int | None = None,
	num_steps: int | None = None,
) -> Vector:
	"""Predicted noise `eps_hat` for one noisy vector at diffusion step `step`.

	Raises:
		DomainError: If `step` is outside `[1, num_steps]` or a condition index is out
			of range.

	"""
	if step < 1 or (num_steps is not None and step > num_steps):
		raise DomainError(f"diffusion step {step} outside [1, {num_steps}]")
	x = as_vector(x_noisy)
	if x.ndim != 1:
		raise DimensionError("denoiser_forward takes a single feature vector")
	return denoiser_forward_batch(
		params,
		x[None, :],
		np.array([step]),
		np.array([label]),
		None if domain is None else np.array([domain]),
	)[0]


def denoiser_backprop(
	params: DenoiserParams, cache: DenoiserCache, dout: Matrix
) -> Vector:
	"""Flat gradient given the output gradient `dout` of a cached forward pass."""
	grad_w_out = cache.a2.T @ dout
	grad_b_out = dout.sum(axis=0)
	dz2 = (dout @ params.w_out.T) * (1.0 - cache.a2 * cache.a2)
	grad_w_h2 = cache.a1.T @ dz2
	grad_b_h2 = dz2.sum(axis=0)
	dz1 = (dz2 @ params.w_h2.T) * (1.0 - cache.a1 * cache.a1)
	grad_w_h1 = cache.a0.T @ dz1
	grad_b_h1 = dz1.sum(axis=0)
	dz0 = (dz1 @ params.w_h1.T) * (1.0 - cache.a0 * cache.a0)
	grad_w_in = cache.inputs.T @ dz0
	grad_b_in = dz0.sum(axis=0)

	dcond = (dz0 @ params.w_in.T)[:, params.d_feat + params.time_dim :]
	grad_class = np.zeros_like(params.class_emb)
	np.add.at(grad_class, cache.labels, dcond)
	arrays = [
		grad_w_in,
		grad_b_in,
		grad_w_h1,
		grad_b_h1,
		grad_w_h2,
		grad_b_h2,
		grad_w_out,
		grad_b_out,
		grad_class,
	]
	if params.domain_emb is not None and cache.domains is not None:
		grad_domain = np.zeros_like(params.domain_emb)
		np.add.at(grad_domain, cache.domains, dcond)
		arrays.append(grad_domain)
	return _flatten(arrays)


def flat_view(params: MlpParams | DenoiserParams) -> Vector:
	"""Stable flat view of either parameter set."""
	return params.flatten()


def unflat_view[P: (MlpParams, DenoiserParams)](template: P, flat: Vector) -> P:
	"""Inverse of `flat_view` for the architecture of `template`.

	Raises:
		DimensionError: If `flat` has the wrong length.

	"""
	return template.with_flat(flat)
