"""Numerical toolkit for sublinearly biLipschitz geometry on hyperbolic model spaces."""

__version__ = "0.1.0"
