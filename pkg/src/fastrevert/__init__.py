"""Simulation and quadrature toolkit for fast mean-reverting diffusions."""
__version__ = "0.1.0"
