"""Tactile object classification from grasp time series."""

__version__ = "0.1.0"
