"""Structured random matrices: connectivity, decompositions and singular value certificates."""

__version__ = "0.1.0"
