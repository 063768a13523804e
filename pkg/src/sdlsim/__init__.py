"""Simulator for Bayesian optimization under delayed feedback in multi-stage labs."""

__version__ = "0.1.0"
