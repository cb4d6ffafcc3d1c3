"""Turn a validated config into data, a client schedule and a finished run."""

import logging
from pathlib import Path
from typing import NamedTuple

from fedreplay.core.experiment_config import DatasetConfig, ExperimentConfig
from fedreplay.data import (
	ClientSchedule,
	Dataset,
	Scenario,
	downsample_avgpool,
	load_idx,
	make_blobs,
	partition_class_inc_iid,
	partition_class_inc_noniid,
	partition_domain_inc,
	train_test_split,
)
from fedreplay.errors import ConfigError, DomainError
from fedreplay.flcore.server import run_experiment
from fedreplay.numkit import RngStream
from fedreplay.reporting import summarize
from fedreplay.schemas import RoundRecord, SummaryRecord

logger = logging.getLogger(__name__)

# Key of the data stream under the master seed; the server uses keys 0 and 1.
DATA_STREAM = 2


class PreparedExperiment(NamedTuple):
	"""Training data, held-out data and the scenario schedule of one run."""

	train: Dataset
	test: Dataset
	schedule: ClientSchedule


class RunOutcome(NamedTuple):
	"""Records and summary of a finished run."""

	records: list[RoundRecord]
	summary: SummaryRecord


def _load_idx_dataset(source: DatasetConfig, rng: RngStream) -> tuple[Dataset, Dataset]:
	assert source.images_path is not None and source.labels_path is not None
	data = load_idx(source.images_path, source.labels_path)
	test = (
		load_idx(source.test_images_path, source.test_labels_path)
		if source.test_images_path is not None and source.test_labels_path is not None
		else None
	)
	if source.side_out is not None:
		data = downsample_avgpool(data, source.side_in, source.side_out)
		if test is not None:
			test = downsample_avgpool(test, source.side_in, source.side_out)
	if test is None:
		return train_test_split(data, source.test_fraction, rng)
	return data, test


def load_dataset(source: DatasetConfig, rng: RngStream) -> tuple[Dataset, Dataset]:
	"""Generate or read the data a config names and split it into train and test.

	Raises:
		FileNotFoundError: If an IDX file is missing.
		FormatError: If an IDX file is malformed.
		DomainError: If the data cannot be generated or split.

	"""
	if source.kind == "idx":
		return _load_idx_dataset(source, rng.split(1))
	data = make_blobs(
		source.num_classes,
		source.num_domains,
		source.samples_per_class_per_domain,
		source.d_feat,
		source.class_separation,
		source.domain_transform_strength,
		rng.split(0),
		noise_std=source.noise_std,
	)
	return train_test_split(data, source.test_fraction, rng.split(1))


def partition(
	config: ExperimentConfig, train: Dataset, rng: RngStream
) -> ClientSchedule:
	"""Realize the configured scenario over `train`.

	Raises:
		ConfigError: If the scenario cannot be realized with the configured counts.

	"""
	K, S = config.num_clients, config.num_sessions
	rps = config.rounds_per_session
	try:
		match config.scenario:
			case Scenario.CLASS_INC_IID:
				return partition_class_inc_iid(
					train, K, S, config.classes_per_session, rng, rps
				)
			case Scenario.CLASS_INC_NONIID:
				return partition_class_inc_noniid(
					train, K, S, config.classes_per_session, rng, rps
				)
			case Scenario.DOMAIN_INC:
				if S != train.num_domains:
					raise ConfigError(
						"num_sessions",
						f"domain-incremental runs need one session per domain "
						f"({train.num_domains}), got {S}",
					)
				return partition_domain_inc(
					train,
					K,
					rng,
					order=config.dataset.domain_order,
					rounds_per_session=rps,
				)
	except DomainError as e:
		raise ConfigError("scenario", str(e)) from e


def build_experiment(config: ExperimentConfig) -> PreparedExperiment:
	"""Data, split and schedule for `config`, all derived from its master seed."""
	rng = RngStream(config.seed).split(DATA_STREAM)
	train, test = load_dataset(config.dataset, rng.split(0))
	schedule = partition(config, train, rng.split(1))
	logger.info(
		"Prepared %d training and %d test examples for %s",
		len(train),
		len(test),
		config.scenario,
	)
	return PreparedExperiment(train, test, schedule)


def execute(
	config: ExperimentConfig, checkpoint_dir: str | Path | None = None
) -> RunOutcome:
	"""Build and run the experiment `config` describes."""
	prepared = build_experiment(config)
	records = run_experiment(
		config,
		prepared.schedule,
		prepared.train,
		prepared.test,
		checkpoint_dir=checkpoint_dir,
	)
	return RunOutcome(records, summarize(config, records))
