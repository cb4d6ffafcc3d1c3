import math

import pytest

from fedreplay.core.experiment_config import Method
from fedreplay.errors import DomainError
from fedreplay.reporting import (
	ROUNDS_HEADER,
	format_value,
	render_rounds_csv,
	render_summary_csv,
	summarize,
	write_run_outputs,
)
from fedreplay.schemas import RoundRecord


def _record(round: int, accuracy: float, loss: float | None = 0.5) -> RoundRecord:
	return RoundRecord(
		round=round,
		session=1,
		method=Method.FEDAVG,
		global_accuracy=accuracy,
		encountered_accuracy=accuracy,
		mean_train_loss=loss,
		wall_time_s=0.25,
		client_train_loss=[loss, math.nan],
	)


@pytest.mark.parametrize(
	("value", "text"),
	[
		(None, ""),
		(True, "true"),
		(0.1, "0.1"),
		(1 / 3, "0.3333333333333333"),
		(7, "7"),
		(Method.FEDAVG_EWC, "fedavg_ewc"),
	],
)
def test_format_value(value, text):
	assert format_value(value) == text


def test_nan_client_losses_become_none():
	assert _record(1, 0.5).client_train_loss == [0.5, None]


def test_rounds_csv_layout():
	text = render_rounds_csv([_record(1, 0.25), _record(2, 0.5, loss=None)])
	lines = text.split("\n")
	assert lines[0] == ",".join(ROUNDS_HEADER)
	assert lines[1] == "1,1,fedavg,0.25,0.25,0.5,,0.25"
	assert lines[2] == "2,1,fedavg,0.5,0.5,,,0.25"
	assert lines[3] == ""
	assert "\r" not in text


def test_summary(tiny_config):
	records = [_record(1, 0.25), _record(2, 0.75)]
	summary = summarize(tiny_config, records)
	assert summary.rounds == 2
	assert summary.final_accuracy == 0.75
	assert summary.mean_accuracy == 0.5
	assert summary.scenario == "class_inc_iid"


def test_summary_of_no_rounds_is_rejected(tiny_config):
	with pytest.raises(DomainError):
		summarize(tiny_config, [])


def test_sweep_summary_prefixes_axis(tiny_config):
	summaries = [summarize(tiny_config, [_record(1, a)]) for a in (0.25, 0.5)]
	text = render_summary_csv(summaries, "replay_scale", [0.25, 1.0])
	header, first, second, _ = text.split("\n")
	assert header.startswith("replay_scale,method,")
	assert first.startswith("0.25,dcfl,")
	assert second.startswith("1.0,dcfl,")


def test_sweep_summary_needs_one_value_per_row(tiny_config):
	summary = summarize(tiny_config, [_record(1, 0.5)])
	with pytest.raises(DomainError):
		render_summary_csv([summary], "replay_scale", [1.0, 2.0])


def test_run_outputs_are_written(tiny_config, tmp_path):
	records = [_record(1, 0.25)]
	rounds, summary = write_run_outputs(
		tmp_path / "out", records, summarize(tiny_config, records)
	)
	assert rounds.read_text(encoding="utf-8") == render_rounds_csv(records)
	assert summary.name == "summary.csv"
	assert len(summary.read_text(encoding="utf-8").splitlines()) == 2
