"""CSV emission for round records and run summaries.

Files are UTF-8 with LF line endings and a header row. Floats are written with
`repr`, which round-trips exactly, and absent values as empty fields.
"""

import csv
import io
import logging
from collections.abc import Sequence
from enum import Enum
from pathlib import Path

import numpy as np

from fedreplay.core.config import settings
from fedreplay.core.experiment_config import ExperimentConfig, config_digest
from fedreplay.errors import DomainError
from fedreplay.schemas import RoundRecord, SummaryRecord

logger = logging.getLogger(__name__)

ROUNDS_HEADER = (
	"round",
	"session",
	"method",
	"global_accuracy",
	"encountered_accuracy",
	"mean_train_loss",
	"synthetic_fidelity_kl",
	"wall_time_s",
)
SUMMARY_HEADER = tuple(SummaryRecord.model_fields)
ROUNDS_FILE = "rounds.csv"
SUMMARY_FILE = "summary.csv"


def format_value(value: object) -> str:
	"""CSV text of one field."""
	match value:
		case None:
			return ""
		case bool():
			return str(value).lower()
		case float():
			return repr(value)
		case Enum():
			return str(value.value)
		case _:
			return str(value)


def _render(header: Sequence[str], rows: Sequence[Sequence[object]]) -> str:
	buffer = io.StringIO()
	writer = csv.writer(buffer, lineterminator="\n")
	writer.writerow(header)
	writer.writerows([format_value(v) for v in row] for row in rows)
	return buffer.getvalue()


def render_rounds_csv(records: Sequence[RoundRecord]) -> str:
	"""`rounds.csv` content, one row per record."""
	return _render(
		ROUNDS_HEADER,
		[[getattr(record, name) for name in ROUNDS_HEADER] for record in records],
	)


def render_summary_csv(
	summaries: Sequence[SummaryRecord],
	axis: str | None = None,
	values: Sequence[float] | None = None,
) -> str:
	"""`summary.csv` content; sweeps prefix each row with the axis value."""
	rows = [[getattr(s, name) for name in SUMMARY_HEADER] for s in summaries]
	if axis is None:
		return _render(SUMMARY_HEADER, rows)
	if values is None or len(values) != len(rows):
		raise DomainError("a sweep summary needs one axis value per row")
	return _render(
		(axis, *SUMMARY_HEADER),
		[[value, *row] for value, row in zip(values, rows, strict=True)],
	)


def summarize(
	config: ExperimentConfig, records: Sequence[RoundRecord]
) -> SummaryRecord:
	"""Final metrics of a run.

	Raises:
		DomainError: If `records` is empty.

	"""
	if not records:
		raise DomainError("cannot summarize a run without rounds")
	last = records[-1]
	return SummaryRecord(
		method=config.method,
		scenario=str(config.scenario),
		rounds=len(records),
		final_accuracy=last.global_accuracy,
		final_encountered_accuracy=last.encountered_accuracy,
		mean_accuracy=float(np.mean([r.global_accuracy for r in records])),
		final_train_loss=last.mean_train_loss,
		config_digest=config_digest(config),
	)


def resolve_output_dir(config: ExperimentConfig) -> Path:
	"""`FEDREPLAY_OUTPUT_DIR` if set, else the config's `output_dir`."""
	return Path(settings.FEDREPLAY_OUTPUT_DIR or config.output_dir)


def write_text(path: Path, content: str) -> Path:
	"""Write `content` as UTF-8 with LF line endings."""
	path.parent.mkdir(parents=True, exist_ok=True)
	with open(path, "w", encoding="utf-8", newline="") as f:
		f.write(content)
	logger.info("Wrote %s", path)
	return path


def write_run_outputs(
	output_dir: Path, records: Sequence[RoundRecord], summary: SummaryRecord
) -> tuple[Path, Path]:
	"""Write `rounds.csv` and `summary.csv` into `output_dir`."""
	return (
		write_text(output_dir / ROUNDS_FILE, render_rounds_csv(records)),
		write_text(output_dir / SUMMARY_FILE, render_summary_csv([summary])),
	)
