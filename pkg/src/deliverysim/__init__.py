"""Desk-scale delivery-robot autonomy stack with a deterministic simulator."""

__version__ = "0.1.0"
