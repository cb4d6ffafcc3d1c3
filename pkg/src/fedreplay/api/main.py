"""API router aggregation."""

from fastapi import APIRouter

from fedreplay.api.routes import config, health, run, selftest

api_router = APIRouter()
api_router.include_router(config.router, prefix="/config", tags=["Configuration"])
api_router.include_router(run.router, prefix="/run", tags=["Run"])
api_router.include_router(selftest.router, prefix="/selftest", tags=["Selftest"])
api_router.include_router(health.router, prefix="/health", tags=["Health"])
