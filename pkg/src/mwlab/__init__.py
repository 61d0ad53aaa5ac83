"""Numerical laboratory for matrix weights and weighted Besov/Triebel-Lizorkin-type spaces."""

__version__ = "0.1.0"
