"""Local biquadratic fits, mean/Gaussian curvature and HK sign classes.

At every pixel the window of radius ``r`` is fitted, in pixel units centred
on the pixel, by

    g(x, y) = a + b x + c y + d x y + e x^2 + f y^2

with ``x`` the row offset and ``y`` the column offset, so
``fx = b, fy = c, fxy = d, fxx = 2e, fyy = 2f``.  Then

    H = ((1 + c^2) 2e - 2 b c d + (1 + b^2) 2f) / (2 (1 + b^2 + c^2)^(3/2))
    K = (4 e f - d^2) / (1 + b^2 + c^2)^2
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import ndimage

from .core import PixelCoord, RangeImage, RangePoseError

COND_LIMIT = 1e12
MIN_FIT_POINTS = 6


class FitError(RangePoseError):
    pass


class UnderDetermined(FitError):
    pass


class IllConditioned(FitError):
    pass


class QuadricCoeffs(NamedTuple):
    a: float
    b: float
    c: float
    d: float
    e: float
    f: float

    @property
    def derivatives(self) -> tuple[float, float, float, float, float]:
        """(fx, fy, fxy, fxx, fyy)."""
        return self.b, self.c, self.d, 2 * self.e, 2 * self.f


def _basis(x, y):
    return np.stack([np.ones_like(x), x, y, x * y, x * x, y * y], axis=-1)


def fit_quadric(img: RangeImage, at: PixelCoord, radius: int = 2) -> QuadricCoeffs:
    """Least-squares biquadratic fit over the valid pixels of one window."""
    u0, v0 = at
    if not img.contains(at):
        raise IndexError(f"{tuple(at)} outside {img.height}x{img.width} image")
    lo_u, hi_u = max(u0 - radius, 0), min(u0 + radius + 1, img.height)
    lo_v, hi_v = max(v0 - radius, 0), min(v0 + radius + 1, img.width)
    ok = img.valid[lo_u:hi_u, lo_v:hi_v]
    uu, vv = np.nonzero(ok)
    if len(uu) < MIN_FIT_POINTS:
        raise UnderDetermined(f"{len(uu)} valid points in window at {tuple(at)}, need {MIN_FIT_POINTS}")
    x = (uu + lo_u - u0).astype(np.float64)
    y = (vv + lo_v - v0).astype(np.float64)
    z = img.depth[lo_u:hi_u, lo_v:hi_v][ok]
    A = _basis(x, y)
    if np.linalg.cond(A.T @ A) > COND_LIMIT:
        raise IllConditioned(f"degenerate point layout in window at {tuple(at)}")
    coef, *_ = np.linalg.lstsq(A, z, rcond=None)
    return QuadricCoeffs(*(float(c) for c in coef))


def curvatures_from_coeffs(b, c, d, e, f):
    """Mean and Gaussian curvature from fit coefficients (scalars or arrays)."""
    w = 1.0 + b * b + c * c
    H = ((1 + c * c) * 2 * e - 2 * b * c * d + (1 + b * b) * 2 * f) / (2 * w ** 1.5)
    K = (4 * e * f - d * d) / (w * w)
    return H, K


@dataclass(frozen=True, eq=False)
class CurvatureField:
    H: np.ndarray
    K: np.ndarray
    coeffs: np.ndarray  # (height, width, 6) in (a, b, c, d, e, f) order
    valid: np.ndarray

    @property
    def shape(self) -> tuple[int, int]:
        return self.H.shape

    def coeffs_at(self, p: PixelCoord) -> QuadricCoeffs:
        return QuadricCoeffs(*(float(x) for x in self.coeffs[p[0], p[1]]))

    def classes(self, eps_h: float = 1e-6, eps_k: float = 1e-6) -> np.ndarray:
        """Grid of :class:`SurfaceClass` codes (``-1`` where invalid)."""
        out = hk_classify_grid(self.H, self.K, eps_h, eps_k)
        out[~self.valid] = -1
        return out


def curvature_field(img: RangeImage, radius: int = 2, edge_margin: int = 0) -> CurvatureField:
    """Fit every pixel's window and evaluate H and K.

    Pixels whose window leaves the image, has fewer than six valid points or a
    near-singular normal matrix are marked invalid.  Windows that are fully
    valid share one precomputed projection; the rest are solved as a batch of
    normal systems.

    ``edge_margin > 0`` additionally invalidates pixels within that Chebyshev
    distance of an invalid pixel.  Silhouettes of rotated surfaces are steep,
    and mask-normalised smoothing lifts their outermost pixels, which reads as
    spurious concave curvature.
    """
    if edge_margin < 0:
        raise ValueError("edge_margin must be non-negative")
    h, w = img.shape
    side = 2 * radius + 1
    off = np.arange(-radius, radius + 1, dtype=np.float64)
    X, Y = np.meshgrid(off, off, indexing="ij")
    phi = _basis(X, Y)  # (side, side, 6)

    mask = img.valid.astype(np.float64)
    z = img.filled(0.0)
    corr = lambda a, k: ndimage.correlate(a, k, mode="constant", cval=0.0)

    count = corr(mask, np.ones((side, side)))
    interior = np.zeros((h, w), dtype=bool)
    interior[radius:h - radius, radius:w - radius] = True
    candidate = interior & img.valid & (count >= MIN_FIT_POINTS)
    full = candidate & (count == side * side)
    partial = candidate & ~full

    coeffs = np.full((h, w, 6), np.nan)
    if full.any():
        P = np.linalg.pinv(phi.reshape(-1, 6))  # (6, side*side)
        for k in range(6):
            coeffs[..., k][full] = corr(z, P[k].reshape(side, side))[full]

    ok = full.copy()
    if partial.any():
        pu, pv = np.nonzero(partial)
        # normal matrix and right-hand side per partial pixel, by explicit window gather
        pad_m = np.pad(mask, radius)
        pad_z = np.pad(z, radius)
        du, dv = np.meshgrid(np.arange(side), np.arange(side), indexing="ij")
        mw = pad_m[pu[:, None, None] + du, pv[:, None, None] + dv].reshape(len(pu), -1)
        zw = pad_z[pu[:, None, None] + du, pv[:, None, None] + dv].reshape(len(pu), -1)
        B = phi.reshape(-1, 6)
        M = np.einsum("ni,ij,ik->njk", mw, B, B)
        rhs = np.einsum("ni,ni,ij->nj", mw, zw, B)
        good = np.linalg.cond(M) <= COND_LIMIT
        sol = np.full((len(pu), 6), np.nan)
        if good.any():
            sol[good] = np.linalg.solve(M[good], rhs[good][..., None])[..., 0]
        coeffs[pu, pv] = sol
        ok[pu[good], pv[good]] = True

    _, b, c, d, e, f = np.moveaxis(coeffs, -1, 0)
    H, K = curvatures_from_coeffs(b, c, d, e, f)
    ok &= np.isfinite(H) & np.isfinite(K)
    if edge_margin:
        side_m = 2 * edge_margin + 1
        ok &= ndimage.binary_erosion(img.valid, np.ones((side_m, side_m), bool), border_value=1)
    H = np.where(ok, H, np.nan)
    K = np.where(ok, K, np.nan)
    return CurvatureField(H, K, coeffs, ok)


class SurfaceClass(enum.IntEnum):
    ELLIPTICAL_CONVEX = 0
    CYLINDRICAL_CONVEX = 1
    HYPERBOLIC_CONVEX = 2
    IMPOSSIBLE = 3
    PLANAR = 4
    HYPERBOLIC_SYMMETRIC = 5
    ELLIPTICAL_CONCAVE = 6
    CYLINDRICAL_CONCAVE = 7
    HYPERBOLIC_CONCAVE = 8


# rows: H < 0, H = 0, H > 0; columns: K > 0, K = 0, K < 0
_HK_TABLE = np.array(
    [
        [SurfaceClass.ELLIPTICAL_CONVEX, SurfaceClass.CYLINDRICAL_CONVEX, SurfaceClass.HYPERBOLIC_CONVEX],
        [SurfaceClass.IMPOSSIBLE, SurfaceClass.PLANAR, SurfaceClass.HYPERBOLIC_SYMMETRIC],
        [SurfaceClass.ELLIPTICAL_CONCAVE, SurfaceClass.CYLINDRICAL_CONCAVE, SurfaceClass.HYPERBOLIC_CONCAVE],
    ],
    dtype=np.int64,
)


def _sign(x, eps):
    return np.where(np.abs(x) <= eps, 0, np.sign(x)).astype(np.int64)


def hk_classify_grid(H, K, eps_h: float = 1e-6, eps_k: float = 1e-6) -> np.ndarray:
    H = np.nan_to_num(np.asarray(H, dtype=np.float64))
    K = np.nan_to_num(np.asarray(K, dtype=np.float64))
    return _HK_TABLE[_sign(H, eps_h) + 1, 1 - _sign(K, eps_k)]


def hk_classify(H: float, K: float, eps_h: float = 1e-6, eps_k: float = 1e-6) -> SurfaceClass:
    """Table lookup on the dead-zoned signs of H and K."""
    return SurfaceClass(int(hk_classify_grid(H, K, eps_h, eps_k)))
