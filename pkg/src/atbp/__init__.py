"""Adaptively transformed empirical best prediction for small area parameters."""

__version__ = "0.1.0"
