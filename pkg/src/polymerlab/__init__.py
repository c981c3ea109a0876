"""Numerical lab for the directed polymer in a random environment, d = 1+2."""

__version__ = "0.1.0"
