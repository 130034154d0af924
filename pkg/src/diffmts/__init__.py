"""Conditional diffusion synthesis of multivariate industrial time series."""

__version__ = "0.1.0"
