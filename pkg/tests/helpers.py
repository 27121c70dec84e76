"""Builders shared across test modules."""

import numpy as np

from rangepose.core import PixelCoord
from rangepose.curvature import CurvatureField
from rangepose.landmarks import CornerPoint, LandmarkSet, NosePoint

# reference eye-corner outputs: (row, col, K), strongest first
CORNER_TABLES = {
    "frontal": [(29, 51, 0.000410), (49, 50, 0.000225)],
    "y": [(20, 53, 0.000998), (8, 53, 0.000336)],
    "x": [(29, 50, 0.092934), (51, 51, 0.00113)],
    "z": [(37, 51, 0.000357), (18, 43, 0.000184)],
    "yx": [(39, 65, 0.002931), (19, 65, 0.001577)],
}


def field_with_peaks(peaks, shape=(80, 80), background_k=0.0, h=1.0):
    """A curvature field that is valid everywhere with K spikes at ``peaks``."""
    H = np.full(shape, h)
    K = np.full(shape, background_k)
    for u, v, k in peaks:
        K[u, v] = k
    return CurvatureField(H, K, np.zeros(shape + (6,)), np.ones(shape, bool))


def landmarks(nose, c1=(40, 30), c2=(60, 30)):
    return LandmarkSet(
        NosePoint(PixelCoord(*nose), 0.0),
        (CornerPoint(PixelCoord(*c1), 1.0), CornerPoint(PixelCoord(*c2), 0.5)),
    )
