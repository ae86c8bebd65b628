"""Explanation uncertainty with sanity checks (weight and label randomization)."""

__version__ = "0.1.0"
