"""Nonconvex-concave curriculum design over a finite level buffer."""

__version__ = "0.1.0"
