"""Certified decay rates and simulation for a boundary-damped KdV-KdV system with time-varying delay."""
__version__ = "0.1.0"
