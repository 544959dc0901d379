"""Anatomy-guided lymph node segmentation and metastasis prediction toolkit."""

__version__ = "0.1.0"
