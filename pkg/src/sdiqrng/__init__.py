"""Finite-size randomness certification for semi-device-independent QRNGs."""

__version__ = "0.1.0"
