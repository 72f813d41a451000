"""Preference-aware diffusion objective for sequential recommendation."""

__version__ = "0.1.0"
