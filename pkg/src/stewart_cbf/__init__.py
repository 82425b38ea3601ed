"""Closed-form multi-constraint CBF safety filtering for a Stewart platform."""

__version__ = "0.1.0"
