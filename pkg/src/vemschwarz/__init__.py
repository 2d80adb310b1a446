"""Overlapping Schwarz preconditioners with spectral coarse spaces for VEM."""

__version__ = "0.1.0"
