"""FastAPI app factory for the fedreplay HTTP surface.

This module exposes `create_app`, which mounts the experiment routes. On startup it
sets `app.state.configs_dir` and verifies that the directory exists.

Example:
	Serving the configs in `./configs` with Uvicorn:

	```python
	from fedreplay.main import create_app
	import uvicorn

	app = create_app("configs")
	uvicorn.run(app, host="127.0.0.1", port=8000)
	```

"""

import logging
import os
from contextlib import asynccontextmanager

from fastapi import FastAPI

from fedreplay.api.main import api_router
from fedreplay.core.config import settings

logging.basicConfig(
	level=logging.INFO,
	format="%(asctime)s - %(levelname)s - %(name)s - %(message)s",
)
logger = logging.getLogger(__name__)


def create_app(configs_dir: str | None = None) -> FastAPI:
	"""Create and configure the FastAPI app.

	Args:
		configs_dir: Directory holding YAML experiment configs; defaults to
			`FEDREPLAY_CONFIGS_DIR`.

	Returns:
		FastAPI: A configured FastAPI application with all routes mounted.

	Raises:
		ValueError: On startup, if `configs_dir` does not exist.

	"""
	_configs_dir = os.path.abspath(configs_dir or settings.FEDREPLAY_CONFIGS_DIR)

	@asynccontextmanager
	async def lifespan(app: FastAPI):
		"""Handle application startup and shutdown events.

		On startup, this sets `app.state.configs_dir`.

		Yields:
			None

		Raises:
			ValueError: If the configs directory does not exist.

		"""
		# === STARTUP ===
		logger.info("fedreplay starting up...")
		try:
			app.state.configs_dir = _configs_dir
			if not os.path.isdir(app.state.configs_dir):
				raise ValueError(
					f"FATAL: configs directory not found at {app.state.configs_dir}"
				)
		except Exception:
			logger.exception("Startup failed")
			raise

		yield

		# === SHUTDOWN ===
		logger.info("fedreplay shutting down...")

	app = FastAPI(title="fedreplay", lifespan=lifespan)
	app.include_router(api_router)
	return app
