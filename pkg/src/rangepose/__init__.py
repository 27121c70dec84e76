"""Pose-axis detection for 2.5D face range images."""

from .core import AxisConvention, EyeAxis, PixelCoord, PoseClass, RangeImage, RangePoseError, cross_eye_coord

__version__ = "0.1.0"

__all__ = [
    "AxisConvention",
    "EyeAxis",
    "PixelCoord",
    "PoseClass",
    "RangeImage",
    "RangePoseError",
    "cross_eye_coord",
]
