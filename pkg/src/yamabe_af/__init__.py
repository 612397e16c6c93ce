"""Yamabe flow of radial asymptotically flat metrics."""

__version__ = "0.1.0"
