"""Contour-Pose gait representation and a local-to-global transformer, in numpy."""

__version__ = "0.1.0"
