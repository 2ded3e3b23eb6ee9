"""Deterministic system-level wireless network simulator."""

__version__ = "0.1.0"
