"""Command-line entry point: `run`, `sweep`, `selftest` and `serve`.

Exit codes are 0 on success, 1 for configuration errors, 2 for runtime errors and 3
when a self-test suite fails.
"""

import argparse
import logging
import math
import sys
from collections.abc import Sequence
from pathlib import Path

from fedreplay.core.config import settings
from fedreplay.core.experiment_config import (
	ExperimentConfig,
	parse_config,
	with_overrides,
)
from fedreplay.errors import ConfigError
from fedreplay.experiment import execute
from fedreplay.reporting import (
	render_summary_csv,
	resolve_output_dir,
	write_run_outputs,
	write_text,
)
from fedreplay.selftest import format_report, run_selftest

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 1
EXIT_RUNTIME = 2
EXIT_SELFTEST = 3

SWEEP_FIELDS = {"clients": "num_clients", "delta": "replay_scale"}


def parse_sweep_values(axis: str, raw: str) -> list[float]:
	"""Parse `v1,v2,...` for a sweep axis.

	Raises:
		ConfigError: On malformed, duplicate or out-of-range values.

	"""
	try:
		values = [float(item) for item in raw.split(",") if item.strip()]
	except ValueError as e:
		raise ConfigError("values", f"not a list of numbers: {raw}") from e
	if not values:
		raise ConfigError("values", "no sweep values given")
	if len(set(values)) != len(values):
		raise ConfigError("values", f"duplicate sweep values in {raw}")
	for v in values:
		if not math.isfinite(v) or v < 0:
			raise ConfigError("values", f"invalid {axis} value {v}")
		if axis == "clients" and (v < 1 or not v.is_integer()):
			raise ConfigError("values", f"client counts must be positive integers: {v}")
	return values


def sweep_configs(
	config: ExperimentConfig, axis: str, values: Sequence[float]
) -> list[ExperimentConfig]:
	"""One validated config per sweep value."""
	field = SWEEP_FIELDS[axis]
	return [
		with_overrides(config, **{field: int(v) if axis == "clients" else v})
		for v in values
	]


def cmd_run(config_path: str, checkpoint_dir: str | None = None) -> int:
	"""Run one experiment and write `rounds.csv` and `summary.csv`."""
	config = parse_config(config_path)
	outcome = execute(config, checkpoint_dir=checkpoint_dir)
	output_dir = resolve_output_dir(config)
	write_run_outputs(output_dir, outcome.records, outcome.summary)
	print(
		f"{config.method} final accuracy {outcome.summary.final_accuracy:.4f} "
		f"({len(outcome.records)} rounds) -> {output_dir}"
	)
	return EXIT_OK


def cmd_sweep(config_path: str, axis: str, raw_values: str) -> int:
	"""Run the base config once per axis value and write `sweep_<axis>.csv`."""
	config = parse_config(config_path)
	values = parse_sweep_values(axis, raw_values)
	configs = sweep_configs(config, axis, values)
	output_dir = resolve_output_dir(config)
	summaries = []
	for value, run_config in zip(values, configs, strict=True):
		logger.info("Sweep %s=%s", axis, value)
		outcome = execute(run_config)
		write_run_outputs(
			output_dir / f"{axis}_{value:g}", outcome.records, outcome.summary
		)
		summaries.append(outcome.summary)
	path = write_text(
		output_dir / f"sweep_{axis}.csv",
		render_summary_csv(summaries, axis=axis, values=values),
	)
	print(f"{len(summaries)} sweep rows -> {path}")
	return EXIT_OK


def cmd_selftest(seed: int = 0) -> int:
	"""Run every self-test suite and print the pass/fail table."""
	results = run_selftest(seed=seed)
	print(format_report(results))
	return EXIT_OK if all(r.passed for r in results) else EXIT_SELFTEST


def cmd_serve(host: str, port: int, configs_dir: str) -> int:
	"""Serve the HTTP surface with uvicorn."""
	import uvicorn

	from fedreplay.main import create_app

	uvicorn.run(create_app(configs_dir), host=host, port=port)
	return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
	"""Argument parser of the `fedreplay` command."""
	parser = argparse.ArgumentParser(
		prog="fedreplay",
		description="Continual federated learning with diffusion generative replay.",
	)
	parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
	commands = parser.add_subparsers(dest="command", required=True)

	run = commands.add_parser("run", help="run one experiment")
	run.add_argument("config", help="YAML experiment config")
	run.add_argument("--checkpoint-dir", help="write a checkpoint after every session")

	sweep = commands.add_parser("sweep", help="run a config over a list of values")
	sweep.add_argument("config", help="YAML experiment config")
	sweep.add_argument("--axis", choices=sorted(SWEEP_FIELDS), required=True)
	sweep.add_argument("--values", required=True, help="comma-separated values")

	selftest = commands.add_parser("selftest", help="run the self-test suites")
	selftest.add_argument("--seed", type=int, default=0)

	serve = commands.add_parser("serve", help="serve the HTTP API")
	serve.add_argument("--host", default="127.0.0.1")
	serve.add_argument("--port", type=int, default=8000)
	serve.add_argument("--configs-dir", default=settings.FEDREPLAY_CONFIGS_DIR)
	return parser


def main(argv: Sequence[str] | None = None) -> int:
	"""Parse arguments, dispatch and map failures to exit codes."""
	args = build_parser().parse_args(argv)
	logging.basicConfig(
		level=logging.DEBUG if args.verbose else logging.INFO,
		format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
	)
	try:
		match args.command:
			case "run":
				return cmd_run(args.config, args.checkpoint_dir)
			case "sweep":
				return cmd_sweep(args.config, args.axis, args.values)
			case "selftest":
				return cmd_selftest(args.seed)
			case "serve":
				return cmd_serve(args.host, args.port, str(Path(args.configs_dir)))
	except (ConfigError, FileNotFoundError) as e:
		logger.exception("Configuration error")
		print(f"config error: {e}", file=sys.stderr)
		return EXIT_CONFIG
	except Exception as e:
		logger.exception("Run failed")
		print(f"error: {e}", file=sys.stderr)
		return EXIT_RUNTIME
	return EXIT_RUNTIME
