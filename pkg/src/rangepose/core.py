"""Domain types shared by every stage of the range-image pose pipeline.

Coordinates are ``(u, v)`` = (row, column).  Depth polarity: a larger value
is closer to the sensor, so the nose tip is a depth maximum.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np


class RangePoseError(Exception):
    """Base class for every error raised by this package."""


class PixelCoord(NamedTuple):
    u: int
    v: int


class EyeAxis(str, enum.Enum):
    ROWS = "rows"
    COLS = "cols"


@dataclass(frozen=True)
class AxisConvention:
    """Which image axis separates the two eyes in an upright capture.

    The other axis is the *cross-eye* axis: both eyes share that coordinate
    unless the face is rolled.
    """

    eye_axis: EyeAxis = EyeAxis.ROWS

    def __post_init__(self):
        object.__setattr__(self, "eye_axis", EyeAxis(self.eye_axis))

    def eye_coord(self, p: PixelCoord) -> int:
        return p[0] if self.eye_axis is EyeAxis.ROWS else p[1]

    def cross_coord(self, p: PixelCoord) -> int:
        return p[1] if self.eye_axis is EyeAxis.ROWS else p[0]


def cross_eye_coord(p: PixelCoord, conv: AxisConvention = AxisConvention()) -> int:
    return conv.cross_coord(p)


class PoseClass(str, enum.Enum):
    ROTATED_X = "X"
    ROTATED_Y = "Y"
    ROTATED_Z = "Z"
    POSITIVE_YX = "YX+"
    NEGATIVE_YX = "YX-"
    FRONTAL = "FRONTAL"

    def __str__(self) -> str:
        return self.value

    @classmethod
    def parse(cls, text: str) -> "PoseClass":
        try:
            return cls(text.strip().upper())
        except ValueError:
            raise ValueError(f"unknown pose class {text!r}") from None


@dataclass(frozen=True, eq=False)
class RangeImage:
    """A validity-masked depth grid.

    ``depth`` holds NaN at invalid cells so stray reads are loud; ``valid`` is
    the authority.  Both arrays are read-only after construction.
    """

    depth: np.ndarray
    valid: np.ndarray

    def __post_init__(self):
        depth = np.array(self.depth, dtype=np.float64)
        if depth.ndim != 2 or depth.shape[0] < 1 or depth.shape[1] < 1:
            raise ValueError(f"depth must be a non-empty 2-D grid, got shape {depth.shape}")
        valid = np.array(self.valid, dtype=bool)
        if valid.shape != depth.shape:
            raise ValueError("valid mask shape differs from depth shape")
        if not np.all(np.isfinite(depth[valid])):
            raise ValueError("valid pixels must hold finite depths")
        depth[~valid] = np.nan
        depth.flags.writeable = False
        valid.flags.writeable = False
        object.__setattr__(self, "depth", depth)
        object.__setattr__(self, "valid", valid)

    @classmethod
    def from_array(cls, depth) -> "RangeImage":
        """Wrap a float grid; non-finite cells become invalid."""
        depth = np.asarray(depth, dtype=np.float64)
        return cls(depth, np.isfinite(depth))

    @property
    def height(self) -> int:
        return self.depth.shape[0]

    @property
    def width(self) -> int:
        return self.depth.shape[1]

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def n_valid(self) -> int:
        return int(self.valid.sum())

    def filled(self, value: float = 0.0) -> np.ndarray:
        """Writable copy of the depths with invalid cells set to ``value``."""
        out = self.depth.copy()
        out[~self.valid] = value
        return out

    def with_depth(self, depth, valid=None) -> "RangeImage":
        return RangeImage(depth, self.valid if valid is None else valid)

    def contains(self, p: PixelCoord) -> bool:
        return 0 <= p[0] < self.height and 0 <= p[1] < self.width

    def __eq__(self, other):
        if not isinstance(other, RangeImage):
            return NotImplemented
        return (
            self.shape == other.shape
            and np.array_equal(self.valid, other.valid)
            and np.array_equal(self.depth[self.valid], other.depth[other.valid])
        )

    __hash__ = None
