"""Pseudo-spectral paracontrolled calculus for singular parabolic equations."""

__version__ = "0.1.0"
