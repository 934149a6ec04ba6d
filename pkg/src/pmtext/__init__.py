"""Multi-alpha probability maps for arbitrary-shape text instance segmentation."""

__version__ = "0.1.0"
