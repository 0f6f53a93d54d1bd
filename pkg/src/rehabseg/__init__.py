"""Refinement and temporal segmentation of rehabilitation keypoint series."""

__version__ = "0.1.0"

CHECKPOINT_FORMAT_VERSION = 1
