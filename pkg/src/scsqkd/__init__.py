"""Finite-key analysis and simulation tools for side-channel-secure QKD."""

__version__ = "0.1.0"
