"""Deterministic EDA backend flow engine."""

__version__ = "1.0.0"
