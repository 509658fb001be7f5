"""Streaming single-codebook speech codec with binary spherical quantization."""

__version__ = "0.1.0"
