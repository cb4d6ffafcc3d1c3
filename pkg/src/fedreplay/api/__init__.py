"""FastAPI integration for fedreplay."""
