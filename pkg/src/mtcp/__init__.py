"""Exact simulation of the two-type contact process and its dual ancestry."""

__version__ = "0.1.0"
