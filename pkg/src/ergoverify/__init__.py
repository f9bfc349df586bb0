"""Numerical verification toolkit for ergodicity criteria of truncated stochastic PDEs."""

__version__ = "0.1.0"
