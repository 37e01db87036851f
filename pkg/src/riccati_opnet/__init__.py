"""Operator-learning surrogates for finite-horizon LQR Riccati equations."""

__version__ = "0.1.0"
