"""Estimation and testing of the diffusion coefficient in SDEs driven by fractional Brownian motion."""

__version__ = "0.1.0"
