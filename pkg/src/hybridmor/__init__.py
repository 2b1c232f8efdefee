"""Hybrid Nitsche domain decomposition with per-subdomain model reduction."""

__version__ = "0.1.0"
