"""Numerical laboratory for bifurcations of polynomial skew products."""

__version__ = "0.1.0"
