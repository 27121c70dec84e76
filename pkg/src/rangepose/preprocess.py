"""Cropping, smoothing and spike removal on masked range grids.

None of these ever turns an invalid pixel valid.
"""

from __future__ import annotations

import numpy as np
from scipy import ndimage

from .core import RangeImage, RangePoseError


class TooFewValidPixels(RangePoseError):
    pass


MIN_CROP_PIXELS = 16


def ellipse_moments(img: RangeImage) -> tuple[np.ndarray, np.ndarray]:
    """Centroid and (population) covariance of the valid pixel coordinates."""
    uv = np.argwhere(img.valid).astype(np.float64)
    centroid = uv.mean(axis=0)
    d = uv - centroid
    cov = d.T @ d / len(uv)
    return centroid, cov


def ellipse_crop(img: RangeImage, scale: float = 2.5) -> RangeImage:
    """Invalidate pixels outside the moment ellipse of the valid region.

    The ellipse is centred on the valid-pixel centroid with semi-axes of
    ``scale`` principal standard deviations.
    """
    if img.n_valid < MIN_CROP_PIXELS:
        raise TooFewValidPixels(f"ellipse crop needs {MIN_CROP_PIXELS} valid pixels, got {img.n_valid}")
    centroid, cov = ellipse_moments(img)
    evals, evecs = np.linalg.eigh(cov)
    uu, vv = np.indices(img.shape, dtype=np.float64)
    d = np.stack([uu - centroid[0], vv - centroid[1]], axis=-1) @ evecs
    r2 = np.zeros(img.shape)
    tiny = 1e-12 * max(evals.max(), 1.0)
    for k in range(2):
        if evals[k] > tiny:
            r2 += d[..., k] ** 2 / evals[k]
        else:
            # degenerate direction: only points on the line survive
            r2 += np.where(np.abs(d[..., k]) < 1e-9, 0.0, np.inf)
    inside = r2 <= scale * scale
    return img.with_depth(img.depth, img.valid & inside)


def gaussian_kernel(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    g = np.exp(-0.5 * (x / sigma) ** 2)
    return g / g.sum()


def gaussian_smooth(img: RangeImage, sigma: float = 1.0, radius: int = 2) -> RangeImage:
    """Mask-normalised Gaussian average over valid neighbours."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    if radius < 1:
        raise ValueError("radius must be at least 1")
    g = gaussian_kernel(sigma, radius)
    mask = img.valid.astype(np.float64)
    num = img.filled(0.0)

    def blur(a):
        a = ndimage.correlate1d(a, g, axis=0, mode="constant", cval=0.0)
        return ndimage.correlate1d(a, g, axis=1, mode="constant", cval=0.0)

    wsum = blur(mask)
    out = np.full(img.shape, np.nan)
    ok = img.valid
    out[ok] = blur(num)[ok] / wsum[ok]
    return img.with_depth(out)


def _window_starts(n: int, window: int, stride: int) -> list[int]:
    if n <= window:
        return [0]
    starts = list(range(0, n - window + 1, stride))
    if starts[-1] != n - window:
        starts.append(n - window)
    return starts


def _home_index(n: int, starts: list[int], window: int) -> np.ndarray:
    """For each coordinate, the window whose centre is nearest (ties: earlier)."""
    centres = np.array(starts, dtype=np.float64) + (min(window, n) - 1) / 2.0
    coords = np.arange(n, dtype=np.float64)
    return np.argmin(np.abs(coords[:, None] - centres[None, :]), axis=1)


def _ransac_plane(u, v, z, iters, tol, rng):
    """Inlier mask of the best 3-point plane hypothesis for one window.

    Best = most inliers, then smallest summed |residual| over inliers, then
    earliest hypothesis.
    """
    n = len(z)
    if n <= 3:
        return np.ones(n, dtype=bool)
    # repeated indices give a zero determinant and are discarded below
    idx = rng.integers(0, n, size=(iters, 3))
    a = np.stack([u[idx], v[idx], np.ones_like(u[idx])], axis=-1)
    det = np.linalg.det(a)
    good = np.abs(det) > 1e-9
    if not good.any():
        return np.ones(n, dtype=bool)
    coef = np.linalg.solve(a[good], z[idx[good]][..., None])[..., 0]
    resid = np.abs(coef[:, 0:1] * u + coef[:, 1:2] * v + coef[:, 2:3] - z)
    inl = resid <= tol
    count = inl.sum(axis=1)
    rsum = np.where(inl, resid, 0.0).sum(axis=1)
    best = np.lexsort((np.arange(len(count)), rsum, -count))[0]
    return inl[best]


def ransac_despike(
    img: RangeImage,
    window: int = 11,
    stride: int = 5,
    iters: int = 100,
    inlier_tol: float = 2.0,
    seed: int = 0,
) -> tuple[RangeImage, np.ndarray]:
    """Flag and repair gross depth outliers by windowed plane RANSAC.

    A valid pixel is flagged when it is an inlier of no window covering it.
    Flagged depths are replaced by the median of unflagged valid pixels in the
    pixel's home window (nearest window centre), or invalidated if there are
    none.  Each window draws from its own generator seeded by
    ``(seed, row_start, col_start)``, so the result does not depend on the
    order windows are visited.
    """
    if window < 5 or window % 2 == 0:
        raise ValueError("window must be odd and at least 5")
    if stride < 1:
        raise ValueError("stride must be positive")
    h, w = img.shape
    rows = _window_starts(h, window, stride)
    cols = _window_starts(w, window, stride)
    valid = img.valid
    depth = img.filled(0.0)
    inlier_any = np.zeros(img.shape, dtype=bool)
    covered = np.zeros(img.shape, dtype=bool)

    for r0 in rows:
        for c0 in cols:
            sub = valid[r0:r0 + window, c0:c0 + window]
            iu, iv = np.nonzero(sub)
            if len(iu) < 3:
                continue
            z = depth[r0:r0 + window, c0:c0 + window][iu, iv]
            rng = np.random.default_rng([seed, r0, c0])
            keep = _ransac_plane(iu.astype(np.float64), iv.astype(np.float64), z, iters, inlier_tol, rng)
            covered[r0 + iu, c0 + iv] = True
            inlier_any[r0 + iu[keep], c0 + iv[keep]] = True

    flagged = valid & covered & ~inlier_any
    out = img.depth.copy()
    new_valid = valid.copy()
    if flagged.any():
        home_r = _home_index(h, rows, window)
        home_c = _home_index(w, cols, window)
        good = valid & ~flagged
        for u, v in zip(*np.nonzero(flagged)):
            r0, c0 = rows[home_r[u]], cols[home_c[v]]
            block = img.depth[r0:r0 + window, c0:c0 + window][good[r0:r0 + window, c0:c0 + window]]
            if block.size:
                out[u, v] = np.median(block)
            else:
                new_valid[u, v] = False
    return RangeImage(out, new_valid), flagged
