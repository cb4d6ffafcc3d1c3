"""Datasets, IDX ingestion and the three continual federated scenarios.

A `Dataset` stores its examples column-wise (a feature matrix plus label and domain
index arrays) so training code can slice mini-batches without per-example objects.
`Example` is the row view. The partitioners turn a dataset into a `ClientSchedule`:
the per-(client, session) index lists that realize one scenario.
"""

import gzip
import logging
import math
import struct
from collections.abc import Iterator, Mapping, Sequence
from dataclasses import dataclass, field
from enum import StrEnum
from pathlib import Path

import numpy as np

from fedreplay.errors import DimensionError, DomainError, FormatError
from fedreplay.numkit import IndexArray, Matrix, RngStream, Vector, as_vector

logger = logging.getLogger(__name__)

IDX_IMAGES_MAGIC = 0x00000803
IDX_LABELS_MAGIC = 0x00000801
IDX_NUM_CLASSES = 10
DOMAIN_ROTATION_DEGREES = 15.0


class Scenario(StrEnum):
	"""Continual federated learning scenario."""

	CLASS_INC_IID = "class_inc_iid"
	CLASS_INC_NONIID = "class_inc_noniid"
	DOMAIN_INC = "domain_inc"


@dataclass(frozen=True)
class Example:
	"""One labelled feature vector."""

	features: Vector
	label: int
	domain: int = 0


@dataclass(frozen=True, eq=False)
class Dataset:
	"""An ordered, immutable collection of examples sharing one feature space.

	Attributes:
		features: Matrix of shape `(n, d_feat)`.
		labels: Class indices in `[0, num_classes)`, shape `(n,)`.
		domains: Domain indices in `[0, num_domains)`, shape `(n,)`.
		num_classes: Number of classes `C`.
		num_domains: Number of domains `D` (1 when domains are unused).

	"""

	features: Matrix
	labels: IndexArray
	domains: IndexArray
	num_classes: int
	num_domains: int = 1

	def __post_init__(self) -> None:
		"""Validate shapes and index ranges."""
		if self.features.ndim != 2:
			raise DimensionError("dataset features must be a 2-D matrix")
		n = self.features.shape[0]
		if self.labels.shape != (n,) or self.domains.shape != (n,):
			raise DimensionError(
				f"dataset has {n} feature rows but labels {self.labels.shape} "
				f"and domains {self.domains.shape}"
			)
		if self.num_classes < 1 or self.num_domains < 1:
			raise DomainError("dataset needs at least one class and one domain")
		if n and (
			self.labels.min() < 0
			or self.labels.max() >= self.num_classes
			or self.domains.min() < 0
			or self.domains.max() >= self.num_domains
		):
			raise DomainError("dataset label or domain index out of range")

	@classmethod
	def from_arrays(
		cls,
		features: Matrix,
		labels: Sequence[int] | IndexArray,
		domains: Sequence[int] | IndexArray | None,
		num_classes: int,
		num_domains: int = 1,
	) -> "Dataset":
		"""Build a dataset from array-likes, defaulting every domain to 0."""
		features = as_vector(features)
		label_array = np.asarray(labels, dtype=np.int64).reshape(-1)
		domain_array = (
			np.zeros(label_array.shape, dtype=np.int64)
			if domains is None
			else np.asarray(domains, dtype=np.int64).reshape(-1)
		)
		return cls(features, label_array, domain_array, num_classes, num_domains)

	@classmethod
	def from_examples(
		cls,
		examples: Sequence[Example],
		num_classes: int,
		num_domains: int,
		d_feat: int,
	) -> "Dataset":
		"""Build a dataset from row views."""
		if not examples:
			return cls.empty(d_feat, num_classes, num_domains)
		features = np.stack([as_vector(example.features) for example in examples])
		if features.shape[1] != d_feat:
			raise DimensionError(f"expected {d_feat} features, got {features.shape[1]}")
		return cls.from_arrays(
			features,
			[example.label for example in examples],
			[example.domain for example in examples],
			num_classes,
			num_domains,
		)

	@classmethod
	def empty(cls, d_feat: int, num_classes: int, num_domains: int = 1) -> "Dataset":
		"""An empty dataset with the given metadata."""
		return cls(
			np.zeros((0, d_feat)),
			np.zeros(0, dtype=np.int64),
			np.zeros(0, dtype=np.int64),
			num_classes,
			num_domains,
		)

	@property
	def d_feat(self) -> int:
		"""Feature dimension."""
		return int(self.features.shape[1])

	def __len__(self) -> int:
		"""Number of examples."""
		return int(self.features.shape[0])

	def __getitem__(self, index: int) -> Example:
		"""Row view of example `index`."""
		return Example(
			self.features[index], int(self.labels[index]), int(self.domains[index])
		)

	def __iter__(self) -> Iterator[Example]:
		"""Iterate examples in stored order."""
		return (self[i] for i in range(len(self)))

	@property
	def examples(self) -> list[Example]:
		"""All examples as row views."""
		return list(self)

	def subset(self, indices: Sequence[int] | IndexArray) -> "Dataset":
		"""Examples at `indices`, in the given order."""
		index_array = np.asarray(indices, dtype=np.int64)
		return Dataset(
			self.features[index_array],
			self.labels[index_array],
			self.domains[index_array],
			self.num_classes,
			self.num_domains,
		)

	def concat(self, other: "Dataset") -> "Dataset":
		"""This dataset followed by `other`; metadata must agree."""
		if (
			other.d_feat != self.d_feat
			or other.num_classes != self.num_classes
			or other.num_domains != self.num_domains
		):
			raise DimensionError("cannot concatenate datasets with different metadata")
		return Dataset(
			np.concatenate([self.features, other.features]),
			np.concatenate([self.labels, other.labels]),
			np.concatenate([self.domains, other.domains]),
			self.num_classes,
			self.num_domains,
		)

	def pairs(self) -> set[tuple[int, int]]:
		"""Distinct `(class, domain)` pairs present."""
		return set(zip(self.labels.tolist(), self.domains.tolist(), strict=True))

	def label_set(self) -> set[int]:
		"""Distinct classes present."""
		return set(self.labels.tolist())

	def domain_set(self) -> set[int]:
		"""Distinct domains present."""
		return set(self.domains.tolist())


@dataclass(frozen=True, eq=False)
class ClientSchedule:
	"""Per-client, per-session dataset indices realizing one scenario.

	Sessions and clients are 0-based; rounds are 1-based, so round `t` belongs to
	session `(t - 1) // rounds_per_session`.
	"""

	scenario: Scenario
	num_clients: int
	num_sessions: int
	rounds_per_session: int
	assignment: Mapping[tuple[int, int], IndexArray]
	domain_order: tuple[int, ...] | None = field(default=None)

	@property
	def total_rounds(self) -> int:
		"""Total communication rounds `T = S * rounds_per_session`."""
		return self.num_sessions * self.rounds_per_session

	def indices(self, client: int, session: int) -> IndexArray:
		"""Dataset indices held by `client` during `session`."""
		return self.assignment[(client, session)]

	def session_of_round(self, round: int) -> int:
		"""0-based session of the 1-based round `round`."""
		return (round - 1) // self.rounds_per_session

	def is_session_start(self, round: int) -> bool:
		"""Whether `round` is the first round of its session."""
		return (round - 1) % self.rounds_per_session == 0

	def is_session_end(self, round: int) -> bool:
		"""Whether `round` is the last round of its session."""
		return round % self.rounds_per_session == 0


# --- Synthetic data ---
def blob_centers(
	num_classes: int, d_feat: int, class_separation: float, rng: RngStream
) -> Matrix:
	"""Class centers at `class_separation` times unit-norm directions.

	With `num_classes <= d_feat` the directions are orthonormal. Otherwise they are
	spread at equal angles on a random 2-plane.
	"""
	if num_classes <= d_feat:
		q, _ = np.linalg.qr(rng.normal((d_feat, num_classes)))
		directions = q.T
	else:
		plane, _ = np.linalg.qr(rng.normal((d_feat, 2)))
		phase = float(rng.uniform(0.0, 2.0 * math.pi, 1)[0])
		angles = phase + 2.0 * math.pi * np.arange(num_classes) / num_classes
		directions = np.outer(np.cos(angles), plane[:, 0]) + np.outer(
			np.sin(angles), plane[:, 1]
		)
	return class_separation * directions


def domain_transform(points: Matrix, domain: int, strength: float) -> Matrix:
	"""Rotate the first two coordinates by 15 degrees per domain and shift.

	The shift has magnitude `strength * domain` along the all-ones direction.
	"""
	out = points.copy()
	if domain == 0:
		return out
	angle = math.radians(DOMAIN_ROTATION_DEGREES * domain)
	cos, sin = math.cos(angle), math.sin(angle)
	x, y = points[:, 0].copy(), points[:, 1].copy()
	out[:, 0] = cos * x - sin * y
	out[:, 1] = sin * x + cos * y
	d_feat = points.shape[1]
	return out + strength * domain * np.ones(d_feat) / math.sqrt(d_feat)


def make_blobs(
	num_classes: int,
	num_domains: int,
	samples_per_class_per_domain: int,
	d_feat: int,
	class_separation: float,
	domain_transform_strength: float,
	rng: RngStream,
	noise_std: float = 0.5,
) -> Dataset:
	"""Gaussian class blobs, optionally replicated across transformed domains.

	Examples are ordered domain-major, then class, then draw.

	Args:
		num_classes: Number of classes `C >= 2`.
		num_domains: Number of domains `D >= 1`.
		samples_per_class_per_domain: Points per `(class, domain)` pair.
		d_feat: Feature dimension (at least 2).
		class_separation: Norm of every class center (positive).
		domain_transform_strength: Shift per domain index, see `domain_transform`.
		rng: Stream; centers come from `rng.split(0)` and points from `rng.split(1)`.
		noise_std: Isotropic standard deviation of each blob.

	Returns:
		Dataset: The generated data.

	Raises:
		DomainError: On invalid counts or a non-positive separation.

	"""
	if num_classes < 2 or d_feat < 2 or num_domains < 1:
		raise DomainError(
			"make_blobs needs num_classes >= 2, d_feat >= 2, domains >= 1"
		)
	if samples_per_class_per_domain < 0:
		raise DomainError("samples_per_class_per_domain must be non-negative")
	if class_separation <= 0 or noise_std <= 0:
		raise DomainError("class_separation and noise_std must be positive")

	centers = blob_centers(num_classes, d_feat, class_separation, rng.split(0))
	point_rng = rng.split(1)
	n = samples_per_class_per_domain
	features, labels, domains = [], [], []
	for domain in range(num_domains):
		for label in range(num_classes):
			points = centers[label] + noise_std * point_rng.normal((n, d_feat))
			features.append(domain_transform(points, domain, domain_transform_strength))
			labels.append(np.full(n, label, dtype=np.int64))
			domains.append(np.full(n, domain, dtype=np.int64))
	return Dataset(
		np.concatenate(features),
		np.concatenate(labels),
		np.concatenate(domains),
		num_classes,
		num_domains,
	)


# --- IDX ingestion ---
def _read_bytes(path: str | Path) -> bytes:
	path = Path(path)
	if path.suffix == ".gz":
		with gzip.open(path, "rb") as f:
			return f.read()
	return path.read_bytes()


def load_idx(images_path: str | Path, labels_path: str | Path) -> Dataset:
	"""Read an MNIST-style IDX image/label pair (optionally gzip-compressed).

	Pixels are scaled from `[0, 255]` to `[0, 1]` and flattened row-major.

	Raises:
		FormatError: On a wrong magic number, truncated data or a count mismatch; the
			error names the offending field.

	"""
	images = _read_bytes(images_path)
	labels = _read_bytes(labels_path)

	if len(images) < 16:
		raise FormatError("images.header", f"expected 16 bytes, got {len(images)}")
	magic, count, rows, cols = struct.unpack(">IIII", images[:16])
	if magic != IDX_IMAGES_MAGIC:
		raise FormatError(
			"images.magic", f"expected 0x{IDX_IMAGES_MAGIC:08x}, got 0x{magic:08x}"
		)
	pixel_bytes = count * rows * cols
	if len(images) - 16 != pixel_bytes:
		raise FormatError(
			"images.pixels",
			f"header declares {pixel_bytes} bytes, file holds {len(images) - 16}",
		)

	if len(labels) < 8:
		raise FormatError("labels.header", f"expected 8 bytes, got {len(labels)}")
	label_magic, label_count = struct.unpack(">II", labels[:8])
	if label_magic != IDX_LABELS_MAGIC:
		raise FormatError(
			"labels.magic",
			f"expected 0x{IDX_LABELS_MAGIC:08x}, got 0x{label_magic:08x}",
		)
	if len(labels) - 8 != label_count:
		raise FormatError(
			"labels.values",
			f"header declares {label_count} labels, file holds {len(labels) - 8}",
		)
	if label_count != count:
		raise FormatError("count", f"{count} images but {label_count} labels")

	pixels = np.frombuffer(images, dtype=np.uint8, offset=16)
	pixels = pixels.reshape(count, rows * cols)
	label_array = np.frombuffer(labels, dtype=np.uint8, offset=8).astype(np.int64)
	if count and label_array.max() >= IDX_NUM_CLASSES:
		raise FormatError("labels.values", f"label {label_array.max()} out of range")

	logger.info("Loaded %d IDX images of %dx%d", count, rows, cols)
	return Dataset(
		pixels.astype(np.float64) / 255.0,
		label_array,
		np.zeros(count, dtype=np.int64),
		IDX_NUM_CLASSES,
	)


def downsample_avgpool(dataset: Dataset, side_in: int, side_out: int) -> Dataset:
	"""Average-pool square images of side `side_in` to side `side_out`.

	Raises:
		DomainError: If `d_feat != side_in**2` or `side_out` does not divide `side_in`.

	"""
	if side_out < 1 or dataset.d_feat != side_in * side_in or side_in % side_out:
		raise DomainError(
			f"cannot pool {dataset.d_feat} features from side {side_in} to {side_out}"
		)
	factor = side_in // side_out
	images = dataset.features.reshape(len(dataset), side_out, factor, side_out, factor)
	pooled = images.mean(axis=(2, 4)).reshape(len(dataset), side_out * side_out)
	return Dataset(
		pooled,
		dataset.labels,
		dataset.domains,
		dataset.num_classes,
		dataset.num_domains,
	)


def iter_minibatches(
	num_examples: int, batch_size: int, rng: RngStream
) -> Iterator[IndexArray]:
	"""Shuffled index batches covering `range(num_examples)` once.

	The last batch may be short.
	"""
	if batch_size < 1:
		raise DomainError(f"batch_size must be positive, got {batch_size}")
	order = rng.permutation(num_examples)
	for start in range(0, num_examples, batch_size):
		yield order[start : start + batch_size]


# --- Scenario partitioning ---
def _split_evenly(
	indices: IndexArray, parts: int, rng: RngStream
) -> list[IndexArray]:
	"""Shuffle, truncate to a multiple of `parts` and cut into equal sorted chunks."""
	per_part = len(indices) // parts
	shuffled = indices[rng.permutation(len(indices))][: per_part * parts]
	return [np.sort(chunk) for chunk in shuffled.reshape(parts, per_part)]


def _check_class_counts(K: int, S: int, classes_per_session: int, C: int) -> None:
	if K < 1 or S < 1 or classes_per_session < 1:
		raise DomainError("K, S and classes_per_session must be positive")
	if S * classes_per_session > C:
		raise DomainError(
			f"{S} sessions of {classes_per_session} classes exceed {C} classes"
		)


def _assign_slots(
	dataset: Dataset,
	holders: Mapping[int, list[tuple[int, int]]],
	rng: RngStream,
) -> dict[tuple[int, int], IndexArray]:
	"""Split each class evenly and disjointly over its `(client, session)` holders."""
	buckets: dict[tuple[int, int], list[IndexArray]] = {}
	for label in sorted(holders):
		slots = holders[label]
		class_indices = np.flatnonzero(dataset.labels == label).astype(np.int64)
		if len(class_indices) < len(slots):
			raise DomainError(
				f"class {label} has {len(class_indices)} samples for {len(slots)} slots"
			)
		for slot, chunk in zip(
			slots,
			_split_evenly(class_indices, len(slots), rng.split(label)),
			strict=True,
		):
			buckets.setdefault(slot, []).append(chunk)
	return {
		slot: np.sort(np.concatenate(chunks)) for slot, chunks in buckets.items()
	}


def partition_class_inc_iid(
	dataset: Dataset,
	K: int,
	S: int,
	classes_per_session: int,
	rng: RngStream,
	rounds_per_session: int = 20,
) -> ClientSchedule:
	"""Every client sees the same classes, which increment session by session.

	Session `s` serves classes `[s * cps, (s + 1) * cps)` to all clients; each class is
	truncated to a multiple of `K` and split evenly across the clients.
	"""
	_check_class_counts(K, S, classes_per_session, dataset.num_classes)
	holders = {
		s * classes_per_session + j: [(k, s) for k in range(K)]
		for s in range(S)
		for j in range(classes_per_session)
	}
	return ClientSchedule(
		Scenario.CLASS_INC_IID,
		K,
		S,
		rounds_per_session,
		_assign_slots(dataset, holders, rng),
	)


def noniid_session_classes(
	client: int, session: int, classes_per_session: int, num_classes: int
) -> list[int]:
	"""Classes held by `client` in `session` under the cyclic-shift rule."""
	start = (session + client) * classes_per_session
	return [(start + j) % num_classes for j in range(classes_per_session)]


def partition_class_inc_noniid(
	dataset: Dataset,
	K: int,
	S: int,
	classes_per_session: int,
	rng: RngStream,
	rounds_per_session: int = 20,
) -> ClientSchedule:
	"""Clients hold different classes, each incrementing session by session.

	Client `k` in session `s` holds the IID session-`s` classes shifted by
	`k * cps` modulo `C`. Each class is split evenly over every `(client, session)` slot
	that holds it, so no sample is ever reused.
	"""
	_check_class_counts(K, S, classes_per_session, dataset.num_classes)
	holders: dict[int, list[tuple[int, int]]] = {}
	for s in range(S):
		for k in range(K):
			for label in noniid_session_classes(
				k, s, classes_per_session, dataset.num_classes
			):
				holders.setdefault(label, []).append((k, s))
	return ClientSchedule(
		Scenario.CLASS_INC_NONIID,
		K,
		S,
		rounds_per_session,
		_assign_slots(dataset, holders, rng),
	)


def partition_domain_inc(
	dataset: Dataset,
	K: int,
	rng: RngStream,
	order: Sequence[int] | None = None,
	rounds_per_session: int = 20,
) -> ClientSchedule:
	"""One domain per session, every client holding all of that domain's classes.

	Args:
		dataset: Source data with at least two domains.
		K: Number of clients.
		rng: Stream used to shuffle before splitting.
		order: Permutation of domain indices giving the session order; defaults to
			ascending.
		rounds_per_session: Rounds between data changes.

	Returns:
		ClientSchedule: `S = D` sessions.

	Raises:
		DomainError: If fewer than two domains exist or `order` is not a permutation.

	"""
	D = dataset.num_domains
	if D < 2:
		raise DomainError("domain-incremental partitioning needs at least 2 domains")
	if K < 1:
		raise DomainError("K must be positive")
	domain_order = tuple(range(D)) if order is None else tuple(order)
	if sorted(domain_order) != list(range(D)):
		raise DomainError(
			f"domain order {domain_order} is not a permutation of 0..{D - 1}"
		)

	buckets: dict[tuple[int, int], list[IndexArray]] = {
		(k, s): [] for k in range(K) for s in range(D)
	}
	for session, domain in enumerate(domain_order):
		for label in range(dataset.num_classes):
			stratum = np.flatnonzero(
				(dataset.domains == domain) & (dataset.labels == label)
			).astype(np.int64)
			if len(stratum) < K:
				if len(stratum):
					logger.warning(
						"Domain %d class %d has %d samples for %d clients; dropped",
						domain,
						label,
						len(stratum),
						K,
					)
				continue
			chunks = _split_evenly(stratum, K, rng.split(domain).split(label))
			for k, chunk in enumerate(chunks):
				buckets[(k, session)].append(chunk)
	assignment = {
		slot: np.sort(np.concatenate(chunks)) if chunks else np.zeros(0, dtype=np.int64)
		for slot, chunks in buckets.items()
	}
	return ClientSchedule(
		Scenario.DOMAIN_INC, K, D, rounds_per_session, assignment, domain_order
	)


def train_test_split(
	dataset: Dataset, test_fraction: float, rng: RngStream
) -> tuple[Dataset, Dataset]:
	"""Stratified split by `(class, domain)`.

	Each stratum of `n` points sends `round(n * test_fraction)` of them (at least one,
	at most `n - 1`) to the test side. Both sides keep the dataset's order.

	Raises:
		DomainError: If the fraction is outside `(0, 1)` or a stratum has fewer than
			two points.

	"""
	if not 0.0 < test_fraction < 1.0:
		raise DomainError(f"test_fraction must lie in (0, 1), got {test_fraction}")
	train_parts: list[IndexArray] = []
	test_parts: list[IndexArray] = []
	for label, domain in sorted(dataset.pairs()):
		stratum = np.flatnonzero(
			(dataset.labels == label) & (dataset.domains == domain)
		).astype(np.int64)
		if len(stratum) < 2:
			raise DomainError(
				f"stratum (class {label}, domain {domain}) has < 2 samples"
			)
		n_test = math.floor(len(stratum) * test_fraction + 0.5)
		n_test = min(max(n_test, 1), len(stratum) - 1)
		shuffled = stratum[rng.permutation(len(stratum))]
		test_parts.append(shuffled[:n_test])
		train_parts.append(shuffled[n_test:])

	def gather(parts: list[IndexArray]) -> IndexArray:
		return np.sort(np.concatenate(parts)) if parts else np.zeros(0, dtype=np.int64)

	return dataset.subset(gather(train_parts)), dataset.subset(gather(test_parts))
