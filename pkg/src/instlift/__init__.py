"""Lift view-inconsistent 2D instance masks into a view-consistent 3D label field."""

__version__ = "0.1.0"
