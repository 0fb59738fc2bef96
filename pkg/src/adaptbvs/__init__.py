"""Adaptive Metropolis-Hastings samplers for Bayesian variable selection."""

__version__ = "0.1.0"
