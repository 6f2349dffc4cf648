"""Compressed-video action recognition: synthetic GOP codec, two-stream network, training and checks."""

__version__ = "0.1.0"
