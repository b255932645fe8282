"""Infinite-width neural-operator Gaussian processes on the flat torus."""
__version__ = "0.1.0"
