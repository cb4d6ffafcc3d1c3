"""Run endpoint `/run`: execute one experiment and write its CSVs."""

import asyncio
import logging
import os

from fastapi import APIRouter, HTTPException, Request, status

from fedreplay.api.routes.utils import get_config_from_request, write_text_file
from fedreplay.experiment import execute
from fedreplay.reporting import (
	ROUNDS_FILE,
	SUMMARY_FILE,
	render_rounds_csv,
	render_summary_csv,
	resolve_output_dir,
)
from fedreplay.schemas import RunRequest, RunResponse

router = APIRouter()
logger = logging.getLogger(__name__)


@router.post(
	"",
	response_model=RunResponse,
	status_code=status.HTTP_200_OK,
	summary="Run an experiment",
)
async def handle_run(request: Request, run_request: RunRequest) -> RunResponse:
	"""Run an experiment.

	This endpoint:
		1. Loads the requested configuration.
		2. Runs the experiment on a worker thread.
		3. Writes `rounds.csv` and `summary.csv` to the output directory.
		4. Returns the summary and every round record.

	Args:
		request: The incoming FastAPI request object.
		run_request: The request payload naming the config to run.

	Returns:
		RunResponse: Output directory, summary row and round records.

	Raises:
		HTTPException: 404 or 400 for a missing or invalid config.
		HTTPException: 500 if the experiment fails.

	"""
	logger.info("Received run request for config: %s", run_request.config_name)

	# 1. Load config
	config = await get_config_from_request(request, run_request.config_name)

	# 2. Run off the event loop
	try:
		outcome = await asyncio.to_thread(execute, config)
	except Exception as e:
		logger.exception("Experiment %s failed", run_request.config_name)
		raise HTTPException(status_code=500, detail=f"Experiment failed: {e}")

	# 3. Write outputs
	output_dir = str(resolve_output_dir(config))
	await asyncio.gather(
		write_text_file(
			os.path.join(output_dir, ROUNDS_FILE), render_rounds_csv(outcome.records)
		),
		write_text_file(
			os.path.join(output_dir, SUMMARY_FILE),
			render_summary_csv([outcome.summary]),
		),
	)

	return RunResponse(
		output_dir=output_dir, summary=outcome.summary, rounds=outcome.records
	)
