"""Helpers shared by the API routers."""

import asyncio
import os

import aiofiles
import aiofiles.os
from fastapi import HTTPException, Request

from fedreplay.core.experiment_config import ExperimentConfig, parse_config


async def get_config_from_request(
	request: Request, config_name: str
) -> ExperimentConfig:
	"""Load and validate an experiment configuration by name.

	This helper centralizes logic for:
	- Finding the configs directory
	- Loading the config file without blocking the event loop
	- Raising clear HTTP errors (validation, file not found)

	Args:
		request: The incoming FastAPI request object. Used to access application state.
		config_name: File name of the configuration inside the configs directory.

	Returns:
		ExperimentConfig: A validated configuration object.

	Raises:
		HTTPException: With a 500 status code if the service is misconfigured.
		HTTPException: With a 404 status code if the config file is not found.
		HTTPException: With a 400 status code for validation or load errors.

	"""
	try:
		configs_dir = request.app.state.configs_dir
	except AttributeError:
		raise HTTPException(
			status_code=500,
			detail="Service is not properly configured. Missing app.state.configs_dir.",
		)

	config_path = os.path.join(configs_dir, os.path.basename(config_name))

	try:
		return await asyncio.to_thread(parse_config, config_path)
	except FileNotFoundError:
		raise HTTPException(
			status_code=404, detail=f"Config file '{config_name}' not found."
		)
	except Exception as e:
		raise HTTPException(
			status_code=400,
			detail=f"Failed to load or validate config file: {e}",
		)


async def write_text_file(path: str, content: str) -> str:
	"""Write `content` as UTF-8 without blocking the event loop."""
	await aiofiles.os.makedirs(os.path.dirname(path), exist_ok=True)
	async with aiofiles.open(path, "w", encoding="utf-8", newline="") as f:
		await f.write(content)
	return path
