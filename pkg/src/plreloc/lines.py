"""2D line segment detection, sampling along segments, and robust 3D line fitting.

The detector follows the gradient-orientation region-growing scheme of LSD
(level-line angles grown within a tolerance, rectangle approximation, density
filter) but replaces the a-contrario validation by density and length tests.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.ndimage import gaussian_filter

from .errors import InsufficientPointsError, ParseError


@dataclass(frozen=True)
class SegmentParams:
    angle_tol_deg: float = 22.5
    min_density: float = 0.7
    min_length: float = 30.0
    grad_threshold: float | None = None  # defaults to 2 / sin(angle_tol)
    blur_sigma: float = 0.6


@dataclass(frozen=True, eq=False)
class LineSegment2D:
    a: np.ndarray
    b: np.ndarray
    angle: float  # mean gradient direction, radians
    width: float = 1.0
    density: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))

    @property
    def length(self) -> float:
        return float(np.linalg.norm(self.b - self.a))

    @property
    def direction_angle(self) -> float:
        d = self.b - self.a
        return math.atan2(d[1], d[0])


@dataclass(frozen=True, eq=False)
class Line3D:
    point: np.ndarray
    direction: np.ndarray
    inliers: np.ndarray
    segment_id: int = -1

    def __post_init__(self):
        d = np.asarray(self.direction, dtype=np.float64)
        object.__setattr__(self, "point", np.asarray(self.point, dtype=np.float64))
        object.__setattr__(self, "direction", d / np.linalg.norm(d))
        object.__setattr__(self, "inliers", np.asarray(self.inliers, dtype=np.float64).reshape(-1, 3))

    def distance(self, x) -> np.ndarray:
        return point_line_distance(x, self.point, self.direction)


def point_line_distance(x, a, v) -> np.ndarray:
    r = np.asarray(x, dtype=np.float64) - a
    return np.linalg.norm(r - (r @ v)[..., None] * v, axis=-1)


def closest_point_on_line(L: Line3D, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return L.point + ((x - L.point) @ L.direction)[..., None] * L.direction


# ------------------------------------------------------------------ detection

def _gradients(img: np.ndarray):
    # 2x2 differences; values live at pixel-corner positions (x + 0.5, y + 0.5)
    a, b = img[:-1, :-1], img[:-1, 1:]
    c, d = img[1:, :-1], img[1:, 1:]
    gx = 0.5 * (b + d - a - c)
    gy = 0.5 * (c + d - a - b)
    return gx, gy


def _angle_diff(a: float, b: float) -> float:
    d = abs(a - b) % (2 * math.pi)
    return min(d, 2 * math.pi - d)


def detect_segments(gray, params: SegmentParams = SegmentParams()) -> list[LineSegment2D]:
    """Detect straight segments in a single-channel image, longest first."""
    img = np.asarray(gray, dtype=np.float64)
    if img.ndim != 2 or min(img.shape) < 32:
        raise ValueError("detect_segments expects a 2D image of at least 32x32")
    if params.blur_sigma > 0:
        img = gaussian_filter(img, params.blur_sigma, mode="nearest")
    tol = math.radians(params.angle_tol_deg)
    rho = params.grad_threshold if params.grad_threshold is not None else 2.0 / math.sin(tol)
    gx, gy = _gradients(img)
    mag = np.hypot(gx, gy)
    h, w = mag.shape
    # level-line angle: perpendicular to the gradient
    level = np.arctan2(gx, -gy)

    order = np.argsort(-mag, axis=None, kind="stable")
    order = order[mag.ravel()[order] > rho]
    mag_l = mag.ravel().tolist()
    ang_l = level.ravel().tolist()
    used = bytearray(h * w)
    for i in np.nonzero(mag.ravel() <= rho)[0].tolist():
        used[i] = 1

    segments = []
    min_region = max(4, int(params.min_length * 0.5))
    for seed in order.tolist():
        if used[seed]:
            continue
        region = _grow(seed, w, h, ang_l, used, tol)
        if len(region) < min_region:
            continue
        seg = _region_to_segment(region, w, mag_l, ang_l, tol, params)
        if seg is not None:
            segments.append(seg)
    segments.sort(key=lambda s: -s.length)
    return segments


def _grow(seed, w, h, ang_l, used, tol):
    theta = ang_l[seed]
    sx, sy = math.cos(theta), math.sin(theta)
    region = [seed]
    used[seed] = 1
    i = 0
    while i < len(region):
        p = region[i]
        i += 1
        y, x = divmod(p, w)
        for dy in (-1, 0, 1):
            yy = y + dy
            if yy < 0 or yy >= h:
                continue
            for dx in (-1, 0, 1):
                xx = x + dx
                if xx < 0 or xx >= w:
                    continue
                q = yy * w + xx
                if used[q]:
                    continue
                a = ang_l[q]
                d = abs(a - theta) % (2 * math.pi)
                if min(d, 2 * math.pi - d) <= tol:
                    used[q] = 1
                    region.append(q)
                    sx += math.cos(a)
                    sy += math.sin(a)
                    theta = math.atan2(sy, sx)
    return region


def _rect(xs, ys, wts, theta):
    cx = float(np.average(xs, weights=wts))
    cy = float(np.average(ys, weights=wts))
    dx, dy = xs - cx, ys - cy
    cov = np.array([[np.sum(wts * dx * dx), np.sum(wts * dx * dy)],
                    [np.sum(wts * dx * dy), np.sum(wts * dy * dy)]])
    evals, evecs = np.linalg.eigh(cov)
    d = evecs[:, 1]
    if _angle_diff(math.atan2(d[1], d[0]), theta) > math.pi / 2:
        d = -d
    n = np.array([-d[1], d[0]])
    along = dx * d[0] + dy * d[1]
    perp = dx * n[0] + dy * n[1]
    return cx, cy, d, n, along, perp


def _region_to_segment(region, w, mag_l, ang_l, tol, params):
    idx = np.asarray(region)
    ys, xs = np.divmod(idx, w)
    xs = xs + 0.5
    ys = ys + 0.5
    wts = np.array([mag_l[i] for i in region])
    angs = np.array([ang_l[i] for i in region])
    theta = math.atan2(np.sin(angs).sum(), np.cos(angs).sum())
    seed_x, seed_y = xs[0], ys[0]
    keep = np.ones(len(idx), dtype=bool)
    radius = None
    while True:
        if keep.sum() < 2:
            return None
        cx, cy, d, n, along, perp = _rect(xs[keep], ys[keep], wts[keep], theta)
        length = along.max() - along.min() + 1.0
        width = perp.max() - perp.min() + 1.0
        density = keep.sum() / (length * width)
        if density >= params.min_density:
            break
        # shrink the region around the seed until the rectangle is dense enough
        dist = np.hypot(xs - seed_x, ys - seed_y)
        radius = (dist[keep].max() if radius is None else radius) * 0.75
        keep &= dist <= radius
        if keep.sum() < params.min_length * 0.5:
            return None
    a = np.array([cx, cy]) + along.min() * d
    b = np.array([cx, cy]) + along.max() * d
    if np.linalg.norm(b - a) < params.min_length:
        return None
    # gradient points from the level-line angle rotated by -90 degrees
    grad = theta - math.pi / 2
    grad = math.atan2(math.sin(grad), math.cos(grad))
    return LineSegment2D(a, b, grad, float(width), float(density))


def read_segments_file(path) -> list[LineSegment2D]:
    """Read precomputed segments, one ``x1 y1 x2 y2`` line per segment."""
    segs = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            x1, y1, x2, y2 = (float(v) for v in line.split())
        except ValueError:
            raise ParseError(path, lineno, f"expected 'x1 y1 x2 y2', got {line!r}") from None
        d = math.atan2(y2 - y1, x2 - x1)
        segs.append(LineSegment2D([x1, y1], [x2, y2], d - math.pi / 2))
    return segs


def write_segments_file(path, segments) -> None:
    Path(path).write_text("".join(
        f"{s.a[0]:.3f} {s.a[1]:.3f} {s.b[0]:.3f} {s.b[1]:.3f}\n" for s in segments))


# --------------------------------------------------------------- sampling/fit

def sample_segment_points(seg: LineSegment2D, spacing: float) -> np.ndarray:
    """Points every ``spacing`` pixels from ``a`` toward ``b``; ``b`` is always included."""
    if spacing <= 0:
        raise ValueError("spacing must be positive")
    length = seg.length
    k = int(math.floor(length / spacing + 1e-9))
    ts = [i * spacing for i in range(k + 1)]
    if length - ts[-1] > 1e-9:
        ts.append(length)
    ts = np.asarray(ts)
    if length == 0:
        return seg.a[None, :].copy()
    u = (seg.b - seg.a) / length
    return seg.a + ts[:, None] * u


def _principal_line(pts: np.ndarray):
    c = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c, full_matrices=False)
    return c, vt[0]


def fit_line3d_ransac(points, threshold: float = 0.02, iterations: int = 100,
                      rng: np.random.Generator | None = None, segment_id: int = -1) -> Line3D:
    return fit_line3d_ransac_mask(points, threshold, iterations, rng, segment_id)[0]


def fit_line3d_ransac_mask(points, threshold: float = 0.02, iterations: int = 100,
                           rng: np.random.Generator | None = None, segment_id: int = -1):
    """Robust 3D line through ``points`` (N, 3).

    Two-point hypotheses are scored by inlier count (ties: lower mean inlier
    distance); the winner is refit to its inliers by principal direction. When
    every pair fits in the iteration budget the pairs are enumerated instead
    of sampled. Returns the line and the boolean inlier mask over ``points``.
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    uniq = np.unique(pts, axis=0)
    if len(uniq) < 2:
        raise InsufficientPointsError("need at least two distinct points")
    n = len(pts)
    if n * (n - 1) // 2 <= iterations:
        i, j = np.triu_indices(n, 1)
    else:
        rng = rng if rng is not None else np.random.default_rng(0)
        i = rng.integers(0, n, size=iterations)
        j = (i + rng.integers(1, n, size=iterations)) % n
    a, b = pts[i], pts[j]
    v = b - a
    norm = np.linalg.norm(v, axis=1)
    ok = norm > 1e-12
    a, v = a[ok], v[ok] / norm[ok, None]
    if len(a) == 0:
        # every sampled pair was coincident; fall back to two distinct points
        a, v = uniq[:1], (uniq[1] - uniq[0])[None] / np.linalg.norm(uniq[1] - uniq[0])
    r = pts[None, :, :] - a[:, None, :]
    dist = np.linalg.norm(r - np.einsum("hnk,hk->hn", r, v)[..., None] * v[:, None, :], axis=2)
    inl = dist <= threshold
    counts = inl.sum(axis=1)
    mean_d = np.where(inl, dist, 0).sum(axis=1) / np.maximum(counts, 1)
    best = np.lexsort((mean_d, -counts))[0]
    best_mask = inl[best]
    line_a, line_v = a[best], v[best]
    if np.unique(pts[best_mask], axis=0).shape[0] >= 2:
        c, d = _principal_line(pts[best_mask])
        refit = point_line_distance(pts, c, d) <= threshold
        if refit.sum() >= best_mask.sum():
            line_a, line_v, best_mask = c, d, refit
    inliers = pts[best_mask]
    centroid = inliers.mean(axis=0)
    # anchor the line at the projection of the inlier centroid
    anchor = line_a + ((centroid - line_a) @ line_v) * line_v
    return Line3D(anchor, line_v, inliers, segment_id), best_mask
