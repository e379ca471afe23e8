"""Numerical laboratory for complex geometric optics solutions of 2-D
semilinear Schroedinger equations with partial Cauchy data."""

__version__ = "0.1.0"
