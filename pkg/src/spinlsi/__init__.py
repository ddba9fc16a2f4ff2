"""Spin-system log-Sobolev laboratory."""

__version__ = "0.1.0"
