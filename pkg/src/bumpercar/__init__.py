"""Simulation and system identification for a single-track vehicle with extreme steering range."""

__version__ = "0.1.0"
