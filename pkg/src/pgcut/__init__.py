"""Unfitted Nitsche finite elements with projected-gradient stabilization."""

__version__ = "0.1.0"
