"""Unified quality and aesthetics vision-language pre-training, desk scale."""

__version__ = "0.1.0"
