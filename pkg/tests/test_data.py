import gzip
import math
import struct

import numpy as np
import pytest

from conftest import write_idx
from fedreplay.data import (
	Dataset,
	Example,
	Scenario,
	blob_centers,
	downsample_avgpool,
	iter_minibatches,
	load_idx,
	make_blobs,
	noniid_session_classes,
	partition_class_inc_iid,
	partition_class_inc_noniid,
	partition_domain_inc,
	train_test_split,
)
from fedreplay.errors import DimensionError, DomainError, FormatError
from fedreplay.numkit import RngStream
from fedreplay.selftest import partition_violations


def _labels(schedule, data, k, s):
	return set(data.labels[schedule.indices(k, s)].tolist())


# --- Dataset ---
def test_dataset_rejects_out_of_range_label():
	with pytest.raises(DomainError):
		Dataset.from_arrays(np.zeros((2, 2)), [0, 3], None, num_classes=3)


def test_dataset_rejects_shape_mismatch():
	with pytest.raises(DimensionError):
		Dataset.from_arrays(np.zeros((2, 2)), [0, 1, 1], None, num_classes=3)


def test_dataset_row_views_and_pairs():
	data = Dataset.from_arrays(
		np.arange(6.0).reshape(3, 2), [0, 1, 1], [1, 0, 0], 2, 2
	)
	assert np.array_equal(data[1].features, data.examples[1].features)
	assert data[0].label == 0 and data[0].domain == 1
	assert data.pairs() == {(0, 1), (1, 0)}
	assert data.label_set() == {0, 1}


def test_dataset_from_examples_round_trips_rows():
	examples = [Example(np.array([1.0, 2.0]), 1), Example(np.array([3.0, 4.0]), 0)]
	data = Dataset.from_examples(examples, num_classes=2, num_domains=1, d_feat=2)
	assert len(data) == 2
	np.testing.assert_array_equal(data.features, [[1.0, 2.0], [3.0, 4.0]])
	assert Dataset.from_examples([], 2, 1, 5).d_feat == 5


def test_concat_requires_matching_metadata():
	a = Dataset.empty(2, 3)
	with pytest.raises(DimensionError):
		a.concat(Dataset.empty(2, 4))
	assert len(a.concat(Dataset.empty(2, 3))) == 0


# --- make_blobs ---
def test_blob_class_means_match_centers():
	rng = RngStream(3)
	n, sigma = 2000, 0.5
	data = make_blobs(2, 1, n, 2, 4.0, 0.0, rng, noise_std=sigma)
	centers = blob_centers(2, 2, 4.0, rng.split(0))

	np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 4.0)
	for label in range(2):
		mean = data.features[data.labels == label].mean(axis=0)
		assert np.all(np.abs(mean - centers[label]) < 4 * sigma / math.sqrt(n))


def test_blob_centers_on_a_plane_when_classes_exceed_dimension(rng):
	centers = blob_centers(10, 3, 2.5, rng)
	assert centers.shape == (10, 3)
	np.testing.assert_allclose(np.linalg.norm(centers, axis=1), 2.5)
	assert np.linalg.matrix_rank(centers) == 2


def test_blobs_with_zero_samples_are_empty():
	data = make_blobs(3, 2, 0, 4, 1.0, 1.0, RngStream(0))
	assert len(data) == 0
	assert (data.num_classes, data.num_domains, data.d_feat) == (3, 2, 4)


def test_blobs_are_deterministic():
	a = make_blobs(3, 2, 10, 2, 4.0, 1.0, RngStream(8))
	b = make_blobs(3, 2, 10, 2, 4.0, 1.0, RngStream(8))
	assert np.array_equal(a.features, b.features)
	assert np.array_equal(a.labels, b.labels)
	assert np.array_equal(a.domains, b.domains)


def test_blob_domains_are_transformed():
	data = make_blobs(2, 2, 2000, 2, 4.0, 1.0, RngStream(8))
	means = [data.features[data.domains == d].mean(axis=0) for d in range(2)]
	assert not np.allclose(means[0], means[1], atol=0.05)


@pytest.mark.parametrize(
	"args",
	[
		(1, 1, 10, 2, 1.0, 0.0),
		(3, 1, 10, 1, 1.0, 0.0),
		(3, 0, 10, 2, 1.0, 0.0),
		(3, 1, 10, 2, 0.0, 0.0),
		(3, 1, -1, 2, 1.0, 0.0),
	],
)
def test_blobs_reject_invalid_arguments(args):
	with pytest.raises(DomainError):
		make_blobs(*args, RngStream(0))


# --- load_idx ---
def test_load_single_white_image(tmp_path):
	images, labels = write_idx(tmp_path, "one", np.full((1, 2, 2), 255), [3])

	data = load_idx(images, labels)

	assert len(data) == 1
	assert data.num_classes == 10 and data.num_domains == 1
	assert data[0].label == 3
	np.testing.assert_array_equal(data[0].features, np.ones(4))


def test_load_gzip_compressed_idx(tmp_path):
	images, labels = write_idx(tmp_path, "gz", np.zeros((2, 2, 2)), [1, 2])
	for path in (images, labels):
		with gzip.open(path.with_suffix(".gz"), "wb") as f:
			f.write(path.read_bytes())

	data = load_idx(images.with_suffix(".gz"), labels.with_suffix(".gz"))

	assert data.labels.tolist() == [1, 2]


def test_load_idx_count_mismatch(tmp_path):
	images, labels = write_idx(tmp_path, "bad", np.zeros((2, 2, 2)), [1])
	with pytest.raises(FormatError) as excinfo:
		load_idx(images, labels)
	assert excinfo.value.field == "count"


def test_load_idx_empty_file(tmp_path):
	images = tmp_path / "empty-images"
	images.write_bytes(b"")
	_, labels = write_idx(tmp_path, "ok", np.zeros((1, 2, 2)), [0])
	with pytest.raises(FormatError) as excinfo:
		load_idx(images, labels)
	assert excinfo.value.field == "images.header"


def test_load_idx_wrong_magic(tmp_path):
	images, labels = write_idx(tmp_path, "magic", np.zeros((1, 2, 2)), [0])
	images.write_bytes(struct.pack(">IIII", 0x00000801, 1, 2, 2) + bytes(4))
	with pytest.raises(FormatError) as excinfo:
		load_idx(images, labels)
	assert excinfo.value.field == "images.magic"


def test_load_idx_truncated_pixels(tmp_path):
	images, labels = write_idx(tmp_path, "short", np.zeros((1, 2, 2)), [0])
	images.write_bytes(images.read_bytes()[:-1])
	with pytest.raises(FormatError) as excinfo:
		load_idx(images, labels)
	assert excinfo.value.field == "images.pixels"


# --- downsample_avgpool ---
def test_identity_pooling():
	data = Dataset.from_arrays(RngStream(0).uniform(0, 1, (3, 16)), [0, 1, 2], None, 3)
	pooled = downsample_avgpool(data, 4, 4)
	np.testing.assert_array_equal(pooled.features, data.features)


def test_pooling_takes_the_mean():
	data = Dataset.from_arrays(np.array([[1.0, 1.0, 3.0, 3.0]]), [0], None, 1)
	assert downsample_avgpool(data, 2, 1).features.tolist() == [[2.0]]


def test_pooling_blocks_are_spatial():
	image = np.array(
		[
			[1, 1, 2, 2],
			[1, 1, 2, 2],
			[3, 3, 4, 4],
			[3, 3, 4, 4],
		],
		dtype=np.float64,
	)
	data = Dataset.from_arrays(image.reshape(1, 16), [0], None, 1)
	assert downsample_avgpool(data, 4, 2).features.tolist() == [[1.0, 2.0, 3.0, 4.0]]


def test_pooling_constant_image():
	data = Dataset.from_arrays(np.full((2, 36), 0.25), [0, 0], None, 1)
	pooled = downsample_avgpool(data, 6, 3)
	np.testing.assert_allclose(pooled.features, 0.25)
	assert pooled.labels.tolist() == [0, 0]


def test_pooling_rejects_indivisible_side():
	data = Dataset.from_arrays(np.zeros((1, 16)), [0], None, 1)
	with pytest.raises(DomainError):
		downsample_avgpool(data, 4, 3)


# --- Mini-batches ---
def test_minibatches_cover_every_index_once(rng):
	batches = list(iter_minibatches(10, 4, rng))
	assert [len(b) for b in batches] == [4, 4, 2]
	assert sorted(np.concatenate(batches).tolist()) == list(range(10))


# --- Partitioners ---
def test_iid_session_classes(rng):
	data = make_blobs(10, 1, 40, 2, 4.0, 0.0, RngStream(1))
	schedule = partition_class_inc_iid(data, 4, 5, 2, rng)

	for s in range(5):
		for k in range(4):
			assert _labels(schedule, data, k, s) == {2 * s, 2 * s + 1}
			assert len(schedule.indices(k, s)) == 20
	assert partition_violations(schedule, data) == []


def test_iid_mnist_scale_shard_size(rng):
	data = make_blobs(2, 1, 6000, 2, 4.0, 0.0, RngStream(1))
	schedule = partition_class_inc_iid(data, 20, 1, 2, rng)
	for k in range(20):
		labels = data.labels[schedule.indices(k, 0)]
		assert np.bincount(labels).tolist() == [300, 300]


def test_iid_single_client_holds_everything(rng):
	data = make_blobs(4, 1, 7, 2, 4.0, 0.0, RngStream(1))
	schedule = partition_class_inc_iid(data, 1, 2, 2, rng)
	held = np.concatenate([schedule.indices(0, s) for s in range(2)])
	assert sorted(held.tolist()) == list(range(len(data)))


def test_iid_truncates_to_multiple_of_clients(rng):
	data = make_blobs(2, 1, 11, 2, 4.0, 0.0, RngStream(1))
	schedule = partition_class_inc_iid(data, 3, 1, 2, rng)
	assert [len(schedule.indices(k, 0)) for k in range(3)] == [6, 6, 6]


def test_noniid_table_rows(rng):
	data = make_blobs(10, 1, 20, 2, 4.0, 0.0, RngStream(1))
	schedule = partition_class_inc_noniid(data, 5, 5, 2, rng)

	session0 = [_labels(schedule, data, k, 0) for k in range(5)]
	assert session0 == [{0, 1}, {2, 3}, {4, 5}, {6, 7}, {8, 9}]
	assert set().union(*session0) == set(range(10))
	assert [_labels(schedule, data, 0, s) for s in range(5)] == [
		{2 * s, 2 * s + 1} for s in range(5)
	]
	for k in range(5):
		for s in range(5):
			assert len(_labels(schedule, data, k, s)) == 2
	assert partition_violations(schedule, data) == []


def test_noniid_cyclic_shift_rule():
	assert noniid_session_classes(1, 0, 2, 10) == [2, 3]
	assert noniid_session_classes(4, 1, 2, 10) == [0, 1]


def test_class_partition_rejects_too_many_sessions(rng):
	data = make_blobs(4, 1, 10, 2, 4.0, 0.0, RngStream(1))
	with pytest.raises(DomainError):
		partition_class_inc_iid(data, 2, 3, 2, rng)


def test_class_partition_rejects_insufficient_samples(rng):
	data = make_blobs(2, 1, 2, 2, 4.0, 0.0, RngStream(1))
	with pytest.raises(DomainError):
		partition_class_inc_iid(data, 3, 1, 2, rng)


def test_domain_sessions_follow_domain_order(rng):
	data = make_blobs(3, 4, 10, 2, 4.0, 1.0, RngStream(1))
	schedule = partition_domain_inc(data, 2, rng, order=[3, 1, 0, 2])

	assert schedule.scenario is Scenario.DOMAIN_INC
	assert schedule.num_sessions == 4
	for s, domain in enumerate([3, 1, 0, 2]):
		for k in range(2):
			indices = schedule.indices(k, s)
			assert set(data.domains[indices].tolist()) == {domain}
			assert set(data.labels[indices].tolist()) == {0, 1, 2}
	assert partition_violations(schedule, data) == []


def test_domain_partition_covers_dataset(rng):
	data = make_blobs(3, 4, 10, 2, 4.0, 1.0, RngStream(1))
	schedule = partition_domain_inc(data, 5, rng)
	assigned = np.concatenate(list(schedule.assignment.values()))
	assert sorted(assigned.tolist()) == list(range(len(data)))


def test_domain_partition_needs_two_domains(rng):
	with pytest.raises(DomainError):
		partition_domain_inc(make_blobs(3, 1, 10, 2, 4.0, 1.0, RngStream(1)), 2, rng)


def test_domain_partition_rejects_bad_order(rng):
	data = make_blobs(3, 2, 10, 2, 4.0, 1.0, RngStream(1))
	with pytest.raises(DomainError):
		partition_domain_inc(data, 2, rng, order=[0, 0])


def test_schedule_round_arithmetic(rng):
	data = make_blobs(4, 1, 10, 2, 4.0, 0.0, RngStream(1))
	schedule = partition_class_inc_iid(data, 1, 2, 2, rng, rounds_per_session=3)
	assert schedule.total_rounds == 6
	assert [schedule.session_of_round(t) for t in range(1, 7)] == [0, 0, 0, 1, 1, 1]
	assert schedule.is_session_start(4) and schedule.is_session_end(3)


# --- train_test_split ---
def test_split_is_stratified(rng):
	data = make_blobs(3, 1, 100, 2, 4.0, 0.0, RngStream(1))
	train, test = train_test_split(data, 0.2, rng)
	assert np.bincount(train.labels).tolist() == [80, 80, 80]
	assert np.bincount(test.labels).tolist() == [20, 20, 20]


def test_split_is_a_deterministic_partition():
	data = make_blobs(2, 2, 25, 2, 4.0, 1.0, RngStream(1))
	train, test = train_test_split(data, 0.3, RngStream(4))
	again, _ = train_test_split(data, 0.3, RngStream(4))

	assert np.array_equal(train.features, again.features)
	rows = {tuple(row) for row in data.features.tolist()}
	train_rows = {tuple(row) for row in train.features.tolist()}
	test_rows = {tuple(row) for row in test.features.tolist()}
	assert train_rows | test_rows == rows
	assert not train_rows & test_rows


def test_split_rejects_tiny_stratum(rng):
	data = Dataset.from_arrays(np.zeros((3, 2)), [0, 0, 1], None, 2)
	with pytest.raises(DomainError):
		train_test_split(data, 0.5, rng)


@pytest.mark.parametrize("fraction", [0.0, 1.0, -0.1])
def test_split_rejects_bad_fraction(rng, fraction):
	with pytest.raises(DomainError):
		train_test_split(make_blobs(2, 1, 10, 2, 1.0, 0.0, RngStream(0)), fraction, rng)
