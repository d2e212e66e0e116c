"""Stereo depth and segmentation mutual-refinement toolbox."""

__all__ = [
    "arch",
    "cli",
    "geometry",
    "losses",
    "metrics",
    "refine",
    "synth",
    "tensorio",
]

__version__ = "0.1.0"
