"""Numerical laboratory for one-dimensional continuum Schroedinger operators
with decaying random potentials."""

__version__ = "0.1.0"
