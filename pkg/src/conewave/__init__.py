"""Wavelet analysis on symmetric cones."""
__version__ = "0.1.0"
