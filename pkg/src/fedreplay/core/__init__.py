"""Configuration models, YAML loading and environment settings."""
