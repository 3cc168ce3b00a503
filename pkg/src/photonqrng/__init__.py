"""Photon-arrival-time QRNG toolkit."""

__version__ = "0.1.0"
