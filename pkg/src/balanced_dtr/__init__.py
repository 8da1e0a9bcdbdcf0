"""Optimally balanced evaluation of individualized and dynamic treatment regimes."""

__version__ = "0.1.0"
