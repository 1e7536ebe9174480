"""Pseudo-spectral solver and estimate harness for fractional kinetic equations."""

__version__ = "0.1.0"
