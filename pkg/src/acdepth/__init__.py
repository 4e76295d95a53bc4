"""Robust self-supervised monocular depth training at desk scale."""

__version__ = "0.1.0"
