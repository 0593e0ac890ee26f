"""Spin-network quantum reservoir simulation and information processing capacity."""

__version__ = "0.1.0"
