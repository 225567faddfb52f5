"""Minimum-lap-time trajectory optimization for an energy-limited electric racecar."""

__version__ = "0.1.0"
