"""Bayesian football forecasting informed by bookmaker odds."""

__version__ = "1.0.0"
