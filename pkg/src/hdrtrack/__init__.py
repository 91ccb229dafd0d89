"""Web tracker detection from binarized HTTP header presence."""

__version__ = "0.1.0"
