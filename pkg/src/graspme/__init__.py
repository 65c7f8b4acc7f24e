"""Synthetic tabletop datasets and evaluation tools for grasp-manifold keypoint estimation."""

__version__ = "0.1.0"
