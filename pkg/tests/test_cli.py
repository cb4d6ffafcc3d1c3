from pathlib import Path

import pytest

from conftest import TINY_EXPERIMENT, write_yaml
from fedreplay import cli
from fedreplay.core.experiment_config import parse_config
from fedreplay.errors import ConfigError, ExperimentError
from fedreplay.selftest import SuiteResult


def _masked(path: Path) -> list[list[str]]:
	"""CSV rows without the wall-time column."""
	rows = [line.split(",") for line in path.read_text(encoding="utf-8").splitlines()]
	return [row[:-1] for row in rows]


def test_run_writes_round_and_summary_files(tiny_config_file, tmp_path):
	assert cli.main(["run", str(tiny_config_file)]) == cli.EXIT_OK

	output = tmp_path / "results"
	rounds = (output / "rounds.csv").read_text(encoding="utf-8").splitlines()
	assert len(rounds) == 1 + TINY_EXPERIMENT["rounds"]
	assert rounds[0].startswith("round,session,method,")
	assert len((output / "summary.csv").read_text(encoding="utf-8").splitlines()) == 2


def test_repeated_runs_write_identical_files(tiny_config_file, tmp_path):
	output = tmp_path / "results"
	cli.main(["run", str(tiny_config_file)])
	first_rounds = _masked(output / "rounds.csv")
	first_summary = (output / "summary.csv").read_bytes()

	cli.main(["run", str(tiny_config_file)])

	assert _masked(output / "rounds.csv") == first_rounds
	assert (output / "summary.csv").read_bytes() == first_summary


def test_run_writes_checkpoints(tiny_config_file, tmp_path):
	checkpoints = tmp_path / "ckpt"
	args = ["run", str(tiny_config_file), "--checkpoint-dir", str(checkpoints)]
	assert cli.main(args) == cli.EXIT_OK
	assert len(list(checkpoints.glob("session_*.npz"))) == 2


def test_invalid_config_exits_with_config_code(tmp_path):
	path = write_yaml(tmp_path / "bad.yaml", {"rounds": 10, "num_sessions": 3})
	assert cli.main(["run", str(path)]) == cli.EXIT_CONFIG


def test_missing_config_exits_with_config_code(tmp_path):
	assert cli.main(["run", str(tmp_path / "absent.yaml")]) == cli.EXIT_CONFIG


def test_runtime_failure_exits_with_runtime_code(tiny_config_file, monkeypatch):
	def fail(config, checkpoint_dir=None):
		raise ExperimentError(3, 1, "diverged")

	monkeypatch.setattr(cli, "execute", fail)
	assert cli.main(["run", str(tiny_config_file)]) == cli.EXIT_RUNTIME


def test_delta_sweep(tiny_config_file, tmp_path):
	args = ["sweep", str(tiny_config_file), "--axis", "delta", "--values", "0.25,1,4"]
	assert cli.main(args) == cli.EXIT_OK

	output = tmp_path / "results"
	lines = (output / "sweep_delta.csv").read_text(encoding="utf-8").splitlines()
	assert len(lines) == 4
	assert lines[0].startswith("delta,method,")
	assert [line.split(",")[0] for line in lines[1:]] == ["0.25", "1.0", "4.0"]
	for name in ("delta_0.25", "delta_1", "delta_4"):
		assert (output / name / "rounds.csv").is_file()


def test_duplicate_sweep_values_are_rejected(tiny_config_file):
	args = ["sweep", str(tiny_config_file), "--axis", "delta", "--values", "1,2,1"]
	assert cli.main(args) == cli.EXIT_CONFIG


@pytest.mark.parametrize("raw", ["", "a,b", "1,-2", "inf"])
def test_parse_sweep_values_rejects(raw):
	with pytest.raises(ConfigError):
		cli.parse_sweep_values("delta", raw)


def test_client_sweep_needs_integers():
	assert cli.parse_sweep_values("clients", "5,10,20,30,50") == [5, 10, 20, 30, 50]
	with pytest.raises(ConfigError):
		cli.parse_sweep_values("clients", "2.5")


def test_sweep_configs_override_one_field(tiny_config_file):
	config = parse_config(tiny_config_file)
	configs = cli.sweep_configs(config, "clients", [1.0, 4.0])
	assert [c.num_clients for c in configs] == [1, 4]
	assert all(isinstance(c.num_clients, int) for c in configs)
	assert {c.seed for c in configs} == {config.seed}


def test_selftest_exit_codes(monkeypatch):
	monkeypatch.setattr(
		cli, "run_selftest", lambda seed=0: [SuiteResult("a", True, "ok")]
	)
	assert cli.main(["selftest"]) == cli.EXIT_OK

	monkeypatch.setattr(
		cli,
		"run_selftest",
		lambda seed=0: [SuiteResult("a", True, "ok"), SuiteResult("b", False, "x")],
	)
	assert cli.main(["selftest", "--seed", "4"]) == cli.EXIT_SELFTEST


def test_unknown_command_is_a_usage_error():
	with pytest.raises(SystemExit):
		cli.main(["train"])
