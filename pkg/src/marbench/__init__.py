"""Desk-scale workbench for CT metal artifact reduction experiments."""

__version__ = "0.1.0"
