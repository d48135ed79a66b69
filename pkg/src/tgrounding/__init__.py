"""Temporal grounding with decoupled query encoding and de-biased multi-prediction."""

__version__ = "0.1.0"
