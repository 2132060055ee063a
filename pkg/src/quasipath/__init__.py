"""Quasipotentials of gradient systems with an attracting curve under small non-gradient drift."""
__version__ = "0.1.0"
