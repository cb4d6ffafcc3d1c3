"""API routes for fedreplay."""
