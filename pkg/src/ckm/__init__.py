"""Copula-based semiparametric first-order Markov models."""

__version__ = "0.1.0"
