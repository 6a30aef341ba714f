"""Metrics and checkpoint files."""
