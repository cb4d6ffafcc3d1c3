"""Session checkpoints as uncompressed `.npz` archives.

An archive stores the config digest, the round, the global flat parameters and, per
client, the flat target and denoiser parameters and the replay cache. Arrays are
written as float64 and int64, so loading returns the saved values bit for bit.
"""

import logging
from collections.abc import Sequence
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from fedreplay.core.experiment_config import ExperimentConfig, config_digest
from fedreplay.data import Dataset
from fedreplay.errors import ConfigError, FormatError
from fedreplay.flcore.client import ClientState
from fedreplay.models import MlpParams
from fedreplay.numkit import Vector

logger = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class ClientSnapshot:
	"""Per-client arrays of a checkpoint."""

	target_params: Vector
	diffusion_params: Vector
	replay_cache: Dataset


@dataclass(frozen=True, eq=False)
class Checkpoint:
	"""Contents of a loaded checkpoint."""

	config_digest: str
	round: int
	global_params: Vector
	clients: dict[int, ClientSnapshot]


def save_checkpoint(
	path: str | Path,
	config: ExperimentConfig,
	round: int,
	global_params: MlpParams,
	clients: Sequence[ClientState],
) -> Path:
	"""Write a checkpoint and return its path."""
	arrays: dict[str, np.ndarray] = {
		"config_digest": np.array(config_digest(config)),
		"round": np.array(round, dtype=np.int64),
		"global_params": global_params.flatten(),
		"client_ids": np.array([c.client_id for c in clients], dtype=np.int64),
	}
	for client in clients:
		prefix = f"client_{client.client_id}"
		cache = client.replay_cache
		arrays[f"{prefix}_target"] = client.target_params.flatten()
		arrays[f"{prefix}_diffusion"] = client.diffusion_params.flatten()
		arrays[f"{prefix}_replay_features"] = cache.features
		arrays[f"{prefix}_replay_labels"] = cache.labels
		arrays[f"{prefix}_replay_domains"] = cache.domains
		arrays[f"{prefix}_replay_meta"] = np.array(
			[cache.num_classes, cache.num_domains], dtype=np.int64
		)
	path = Path(path)
	path.parent.mkdir(parents=True, exist_ok=True)
	with open(path, "wb") as f:
		np.savez(f, **arrays)
	logger.info("Checkpoint for round %d written to %s", round, path)
	return path


def load_checkpoint(path: str | Path, config: ExperimentConfig) -> Checkpoint:
	"""Read a checkpoint written under the same config.

	Raises:
		FileNotFoundError: If `path` does not exist.
		ConfigError: If the checkpoint was written under a different config.
		FormatError: If an expected array is missing.

	"""
	with np.load(path, allow_pickle=False) as archive:
		try:
			digest = str(archive["config_digest"])
			if digest != config_digest(config):
				raise ConfigError(
					"<root>", f"checkpoint {path} was written under a different config"
				)
			clients: dict[int, ClientSnapshot] = {}
			for client_id in archive["client_ids"].tolist():
				prefix = f"client_{client_id}"
				num_classes, num_domains = archive[f"{prefix}_replay_meta"].tolist()
				clients[client_id] = ClientSnapshot(
					target_params=archive[f"{prefix}_target"],
					diffusion_params=archive[f"{prefix}_diffusion"],
					replay_cache=Dataset(
						archive[f"{prefix}_replay_features"],
						archive[f"{prefix}_replay_labels"],
						archive[f"{prefix}_replay_domains"],
						num_classes,
						num_domains,
					),
				)
			return Checkpoint(
				config_digest=digest,
				round=int(archive["round"]),
				global_params=archive["global_params"],
				clients=clients,
			)
		except KeyError as e:
			raise FormatError("checkpoint", f"missing array {e}") from e
