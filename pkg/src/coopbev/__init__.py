"""Bandwidth-constrained multi-agent cooperative BEV perception testbed."""

__version__ = "0.1.0"
