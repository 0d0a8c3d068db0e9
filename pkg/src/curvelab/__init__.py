"""Curve-query transformer for monocular 3D lane detection, with a synthetic scene generator,
training harness and lane metrics."""

__version__ = "0.1.0"
