"""Self-test endpoint `/selftest`."""

import asyncio
import logging

from fastapi import APIRouter, status

from fedreplay.schemas import SelftestResponse, SuiteResultOutput
from fedreplay.selftest import run_selftest

router = APIRouter()
logger = logging.getLogger(__name__)


@router.post(
	"",
	response_model=SelftestResponse,
	status_code=status.HTTP_200_OK,
	summary="Run the self-test suites",
)
async def handle_selftest(seed: int = 0) -> SelftestResponse:
	"""Run every self-test suite on a worker thread.

	Failing suites are reported in the body; the endpoint itself does not raise.
	"""
	results = await asyncio.to_thread(run_selftest, None, seed)
	suites = [
		SuiteResultOutput(name=r.name, passed=r.passed, detail=r.detail)
		for r in results
	]
	return SelftestResponse(passed=all(s.passed for s in suites), suites=suites)
