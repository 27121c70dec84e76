"""Rotation-axis classification from nose-tip and eye-corner displacements."""

from __future__ import annotations

from dataclasses import dataclass

from .core import AxisConvention, PoseClass
from .landmarks import LandmarkSet


@dataclass(frozen=True)
class PoseThresholds:
    e: int = 2  # eye-line and nose displacement tolerance, pixels
    m: int = 3  # composite nose elevation threshold, pixels

    def __post_init__(self):
        if self.e < 0 or self.m < 0:
            raise ValueError("pose thresholds must be non-negative")


def multipose_detect(
    y_ref: LandmarkSet,
    probe: LandmarkSet,
    conv: AxisConvention = AxisConvention(),
    th: PoseThresholds = PoseThresholds(),
) -> PoseClass:
    """Compare the probe's nose elevation with a pure-yaw reference at the same yaw."""
    d = conv.cross_coord(probe.nose.at) - conv.cross_coord(y_ref.nose.at)
    if d > th.m:
        return PoseClass.POSITIVE_YX
    if d < -th.m:
        return PoseClass.NEGATIVE_YX
    return PoseClass.ROTATED_Y


def classify_pose(
    frontal: LandmarkSet,
    probe: LandmarkSet,
    y_ref: LandmarkSet | None = None,
    conv: AxisConvention = AxisConvention(),
    th: PoseThresholds = PoseThresholds(),
) -> PoseClass:
    """Decide the rotation axis of ``probe`` relative to the subject's frontal scan.

    Rules, first match wins:

    1. probe eye corners differ by more than ``e`` on the cross-eye axis: Z
    2. nose moved along the eye axis at least as far as across it, and more
       than ``e``: Y, or a YX composite when ``y_ref`` says so
    3. nose moved further across the eye axis, and more than ``e``: X
    4. otherwise frontal
    """
    c1, c2 = (conv.cross_coord(c.at) for c in probe.corners)
    if abs(c1 - c2) > th.e:
        return PoseClass.ROTATED_Z
    d_yaw = abs(conv.eye_coord(frontal.nose.at) - conv.eye_coord(probe.nose.at))
    d_pitch = abs(conv.cross_coord(frontal.nose.at) - conv.cross_coord(probe.nose.at))
    if d_yaw >= d_pitch and d_yaw > th.e:
        if y_ref is not None:
            return multipose_detect(y_ref, probe, conv, th)
        return PoseClass.ROTATED_Y
    if d_pitch > d_yaw and d_pitch > th.e:
        return PoseClass.ROTATED_X
    return PoseClass.FRONTAL
