"""Numerical laboratory for the high-dimensional Keller-Segel system."""

__version__ = "0.1.0"
