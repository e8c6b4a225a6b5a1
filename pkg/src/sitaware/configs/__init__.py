"""Bundled experiment configurations (YAML)."""
