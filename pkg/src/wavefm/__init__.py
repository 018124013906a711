"""Conditional flow matching in a 3D wavelet domain, with numpy only."""

__version__ = "0.1.0"
