"""Corpus construction and evaluation tools for clinical speech recognition."""

__version__ = "0.1.0"
