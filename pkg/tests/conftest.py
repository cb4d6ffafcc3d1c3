import struct
from pathlib import Path

import numpy as np
import pytest
import yaml

from fedreplay.core.experiment_config import DatasetConfig, ExperimentConfig
from fedreplay.data import Dataset, make_blobs
from fedreplay.numkit import RngStream

TINY_EXPERIMENT = {
	"scenario": "class_inc_iid",
	"method": "dcfl",
	"num_clients": 2,
	"num_sessions": 2,
	"rounds": 4,
	"classes_per_session": 2,
	"local_epochs": 1,
	"diffusion_epochs": 2,
	"batch_size": 8,
	"lr_target": 1e-2,
	"lr_diffusion": 1e-3,
	"diffusion_steps": 5,
	"hidden_width": 8,
	"denoiser_hidden": 8,
	"time_embedding_dim": 4,
	"cond_embedding_dim": 4,
	"seed": 7,
	"dataset": {
		"num_classes": 4,
		"samples_per_class_per_domain": 25,
		"d_feat": 2,
	},
}


def write_yaml(path: Path, data: dict) -> Path:
	path.write_text(yaml.safe_dump(data), encoding="utf-8")
	return path


def write_idx(
	directory: Path, name: str, images: np.ndarray, labels: list[int]
) -> tuple[Path, Path]:
	"""Write an IDX image/label pair of square uint8 images."""
	count, rows, cols = images.shape
	images_path = directory / f"{name}-images-idx3-ubyte"
	labels_path = directory / f"{name}-labels-idx1-ubyte"
	images_path.write_bytes(
		struct.pack(">IIII", 0x00000803, count, rows, cols)
		+ images.astype(np.uint8).tobytes()
	)
	labels_path.write_bytes(
		struct.pack(">II", 0x00000801, len(labels)) + bytes(labels)
	)
	return images_path, labels_path


@pytest.fixture
def rng() -> RngStream:
	return RngStream(1234)


@pytest.fixture
def tiny_config(tmp_path: Path) -> ExperimentConfig:
	return ExperimentConfig.model_validate(
		{**TINY_EXPERIMENT, "output_dir": str(tmp_path / "results")}
	)


@pytest.fixture
def tiny_config_file(tmp_path: Path) -> Path:
	return write_yaml(
		tmp_path / "tiny.yaml",
		{**TINY_EXPERIMENT, "output_dir": str(tmp_path / "results")},
	)


@pytest.fixture
def four_class_blobs() -> Dataset:
	return make_blobs(4, 1, 40, 2, 4.0, 0.0, RngStream(11))


@pytest.fixture
def blob_config() -> DatasetConfig:
	return DatasetConfig(num_classes=4, samples_per_class_per_domain=25, d_feat=2)
