"""Nose tip by maximum 3x3 depth sum; inner eye corners by peak Gaussian curvature."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .core import PixelCoord, RangeImage, RangePoseError
from .curvature import CurvatureField


class LandmarkError(RangePoseError):
    pass


class NoInteriorPixels(LandmarkError):
    pass


class NoCandidates(LandmarkError):
    pass


class OneCandidateOnly(LandmarkError):
    pass


class NosePoint(NamedTuple):
    at: PixelCoord
    depth: float


class CornerPoint(NamedTuple):
    at: PixelCoord
    K: float


@dataclass(frozen=True)
class LandmarkSet:
    nose: NosePoint
    corners: tuple[CornerPoint, CornerPoint]

    def __post_init__(self):
        if len(self.corners) != 2:
            raise ValueError("a landmark set holds exactly two eye corners")

    def translated(self, du: int, dv: int) -> "LandmarkSet":
        shift = lambda p: PixelCoord(p[0] + du, p[1] + dv)
        return LandmarkSet(
            NosePoint(shift(self.nose.at), self.nose.depth),
            tuple(CornerPoint(shift(c.at), c.K) for c in self.corners),
        )

    def to_dict(self) -> dict:
        return {
            "nose": {"u": int(self.nose.at[0]), "v": int(self.nose.at[1]), "depth": float(self.nose.depth)},
            "corners": [{"u": int(c.at[0]), "v": int(c.at[1]), "K": float(c.K)} for c in self.corners],
        }


def find_nose_tip(img: RangeImage) -> NosePoint:
    """Interior pixel with the largest 3x3 neighbourhood depth sum.

    Only pixels whose whole 3x3 neighbourhood is valid compete; ties go to the
    smaller row, then the smaller column.
    """
    if img.height < 3 or img.width < 3:
        raise NoInteriorPixels(f"{img.height}x{img.width} image has no interior pixels")
    ones = np.ones((3, 3))
    full = ndimage.correlate(img.valid.astype(np.int64), ones.astype(np.int64), mode="constant") == 9
    full[0, :] = full[-1, :] = False
    full[:, 0] = full[:, -1] = False
    if not full.any():
        raise NoInteriorPixels("no pixel has a fully valid 3x3 neighbourhood")
    sums = ndimage.correlate(img.filled(0.0), ones, mode="constant")
    sums = np.where(full, sums, -np.inf)
    u, v = np.unravel_index(int(np.argmax(sums)), sums.shape)
    return NosePoint(PixelCoord(int(u), int(v)), float(img.depth[u, v]))


def detect_eye_corners(
    field: CurvatureField, k_thresh: float = 1e-4, min_sep: int = 8
) -> tuple[CornerPoint, CornerPoint]:
    """The two strongest elliptical-concave points (H > 0, K > k_thresh).

    The second corner is the best candidate at Chebyshev distance >= min_sep
    from the first.
    """
    H = np.where(field.valid, field.H, np.nan)
    K = np.where(field.valid, field.K, np.nan)
    with np.errstate(invalid="ignore"):
        cand = field.valid & (H > 0) & (K > k_thresh)
    if not cand.any():
        raise NoCandidates(f"no pixel with H > 0 and K > {k_thresh:g}")
    score = np.where(cand, K, -np.inf)
    u1, v1 = np.unravel_index(int(np.argmax(score)), score.shape)
    uu, vv = np.indices(score.shape)
    far = np.maximum(np.abs(uu - u1), np.abs(vv - v1)) >= min_sep
    score2 = np.where(far, score, -np.inf)
    if not np.isfinite(score2).any():
        raise OneCandidateOnly(f"no second candidate at least {min_sep} px from ({u1}, {v1})")
    u2, v2 = np.unravel_index(int(np.argmax(score2)), score2.shape)
    first = CornerPoint(PixelCoord(int(u1), int(v1)), float(K[u1, v1]))
    second = CornerPoint(PixelCoord(int(u2), int(v2)), float(K[u2, v2]))
    return first, second
