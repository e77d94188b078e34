"""Electricity-theft detection on smart-meter telemetry."""

__version__ = "0.1.0"
