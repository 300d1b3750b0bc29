"""Empirical Bayes estimation of heterogeneous production functions."""

__version__ = "0.1.0"
