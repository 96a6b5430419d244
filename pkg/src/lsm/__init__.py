"""Landslide susceptibility mapping from raster stacks with small neural classifiers."""

__version__ = "0.1.0"
