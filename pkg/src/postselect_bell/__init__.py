"""Postselection and Bell-inequality simulation toolkit."""

__version__ = "0.1.0"
