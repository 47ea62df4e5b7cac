"""Numerical laboratory for alpha-determinantal and permanental point processes."""

__version__ = "0.1.0"
