"""Pixel-classifier object detection with grammar-generated features and AdaBoost."""

__version__ = "0.1.0"
