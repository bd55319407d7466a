"""Numerical laboratory for weighted Bergman kernels, Agmon distances and Kohn Laplacians."""

__version__ = "0.1.0"
