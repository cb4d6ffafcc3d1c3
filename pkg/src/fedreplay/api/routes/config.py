"""Configuration endpoint `/config`.

This router exposes a read-only endpoint that loads and validates an experiment
configuration file from the configs directory.
"""

import logging

from fastapi import APIRouter, Request, status

from fedreplay.api.routes.utils import get_config_from_request
from fedreplay.core.experiment_config import ExperimentConfig

logger = logging.getLogger(__name__)
router = APIRouter()


@router.get(
	"",
	response_model=ExperimentConfig,
	status_code=status.HTTP_200_OK,
	summary="Get configuration",
)
async def handle_config(request: Request, config_name: str) -> ExperimentConfig:
	"""Get configuration, with every unset key at its default.

	Args:
		request: The incoming FastAPI request object. Used to access application state.
		config_name: The name of the configuration file to load.

	Returns:
		ExperimentConfig: A validated configuration.

	Raises:
		HTTPException: 500 if the service is misconfigured.
		HTTPException: 404 if the configuration file is not found.
		HTTPException: 400 if the configuration file is invalid.

	"""
	logger.info("Received config request for %s", config_name)
	return await get_config_from_request(request, config_name)
