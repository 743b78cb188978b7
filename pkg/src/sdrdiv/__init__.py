"""Semidefinite-relaxation detection of binary signals over Gaussian MIMO
channels, baseline receivers, and Monte Carlo diversity experiments."""

__version__ = "0.1.0"
