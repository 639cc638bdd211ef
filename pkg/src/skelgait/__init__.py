"""Skeleton-based gait recognition: graph convolution over 2D joints, multi-scale
body-part pyramid mapping, and a triplet/arcface fusion loss."""

__version__ = "0.1.0"
