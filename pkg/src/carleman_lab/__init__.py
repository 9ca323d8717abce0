"""Numerical laboratory for Carleman weights and stability of transmission waves with variable jumps."""

__version__ = "0.1.0"
