"""Respiratory-rate estimation for standing subjects from FMCW radar frames."""

__version__ = "0.1.0"
