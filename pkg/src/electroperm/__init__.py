"""Stochastic single-cell electropermeabilization on a 2D membrane."""

__version__ = "0.1.0"
