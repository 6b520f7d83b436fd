"""Whole-slide-image region-of-interest detection pipeline."""

__version__ = "0.1.0"
