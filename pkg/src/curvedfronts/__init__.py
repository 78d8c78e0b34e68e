"""Curved fronts of bistable reaction-diffusion equations in two-dimensional periodic media."""

__version__ = "0.1.0"
