"""Depth-normalised pixel comparison features and Walsh-Hadamard patch descriptors."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.linalg import hadamard

from .errors import BoundsError, InvalidDepthError

PATCH = 16
N_COEFFS = 64


@dataclass(frozen=True)
class SplitParams:
    dx: float
    dy: float
    c1: int
    c2: int
    tau: float = 0.0

    def __post_init__(self):
        if self.c1 not in (0, 1, 2) or self.c2 not in (0, 1, 2):
            raise ValueError("channel indices must be 0, 1 or 2")


@dataclass(frozen=True, eq=False)
class SplitCandidates:
    """Column-wise batch of split parameters (thresholds are picked later)."""

    dx: np.ndarray
    dy: np.ndarray
    c1: np.ndarray
    c2: np.ndarray

    def __len__(self):
        return len(self.dx)

    def __getitem__(self, i):
        if isinstance(i, (int, np.integer)):
            return SplitParams(float(self.dx[i]), float(self.dy[i]), int(self.c1[i]), int(self.c2[i]))
        return SplitCandidates(self.dx[i], self.dy[i], self.c1[i], self.c2[i])

    def to_list(self) -> list[SplitParams]:
        return [self[i] for i in range(len(self))]


def sample_split_candidates(rng, count: int, radius: float) -> SplitCandidates:
    """``count`` offsets uniform in the disc of ``radius`` with random channel pairs."""
    if count <= 0:
        raise ValueError("count must be positive")
    rng = np.random.default_rng(rng)
    r = radius * np.sqrt(rng.uniform(size=count))
    th = rng.uniform(0, 2 * np.pi, size=count)
    c = rng.integers(0, 3, size=(2, count))
    return SplitCandidates(r * np.cos(th), r * np.sin(th), c[0], c[1])


class ImageStack:
    """Frames stacked for vectorised feature lookups.

    ``rgb`` is (F, H, W, 3) uint8 and ``depth`` (F, H, W) float32 with NaN
    marking invalid pixels.
    """

    def __init__(self, rgb, depth):
        self.rgb = np.ascontiguousarray(rgb, dtype=np.uint8)
        self.depth = np.ascontiguousarray(depth, dtype=np.float32)
        if self.rgb.ndim == 3:
            self.rgb = self.rgb[None]
            self.depth = self.depth[None]
        self.n, self.h, self.w = self.depth.shape
        self._rgb_flat = self.rgb.reshape(-1).astype(np.int16)
        self._valid_flat = np.isfinite(self.depth).reshape(-1)

    @classmethod
    def from_frames(cls, frames) -> ImageStack:
        for f in frames:
            f.require_aligned()
        return cls(np.stack([f.rgb for f in frames]), np.stack([f.depth for f in frames]))

    def responses(self, fidx, px, py, d, dx, dy, c1, c2):
        """Feature values and validity for broadcastable sample/parameter arrays.

        Sample arrays ``fidx, px, py, d`` and parameter arrays ``dx, dy, c1,
        c2`` broadcast against each other; invalid responses come back as 0
        with ``valid`` False.
        """
        ox = np.floor(px + dx / d + 0.5).astype(np.int64)
        oy = np.floor(py + dy / d + 0.5).astype(np.int64)
        inb = (ox >= 0) & (ox < self.w) & (oy >= 0) & (oy < self.h)
        base = fidx * (self.h * self.w)
        opix = base + np.where(inb, oy * self.w + ox, 0)
        valid = inb & self._valid_flat[opix]
        a = self._rgb_flat[(base + py * self.w + px) * 3 + c1]
        b = self._rgb_flat[opix * 3 + c2]
        return np.where(valid, a - b, 0).astype(np.float32), valid


def pixel_cmp_feature(frame, p, phi: SplitParams):
    """Single-pixel comparison response, or ``None`` when it is invalid."""
    x, y = int(p[0]), int(p[1])
    h, w = frame.depth.shape
    if not (0 <= x < w and 0 <= y < h):
        raise BoundsError(f"pixel {p} outside image")
    d = float(frame.depth[y, x])
    if not np.isfinite(d):
        raise InvalidDepthError(f"pixel {p} has no valid depth")
    ox = int(np.floor(x + phi.dx / d + 0.5))
    oy = int(np.floor(y + phi.dy / d + 0.5))
    if not (0 <= ox < w and 0 <= oy < h) or not np.isfinite(frame.depth[oy, ox]):
        return None
    return float(frame.rgb[y, x, phi.c1]) - float(frame.rgb[oy, ox, phi.c2])


# ------------------------------------------------------------------------ WHT

@lru_cache(maxsize=None)
def sequency_hadamard(n: int = PATCH) -> np.ndarray:
    """Orthonormal Walsh matrix, rows sorted by number of sign changes."""
    h = hadamard(n).astype(np.float64)
    changes = (np.diff(h, axis=1) != 0).sum(axis=1)
    return h[np.argsort(changes, kind="stable")] / np.sqrt(n)


@lru_cache(maxsize=None)
def coefficient_order(n: int = PATCH, k: int = N_COEFFS) -> tuple[np.ndarray, np.ndarray]:
    """Row/column sequency pairs of the first ``k`` 2D coefficients (by i + j, then i)."""
    ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
    order = np.lexsort((ii.ravel(), (ii + jj).ravel()))[:k]
    return ii.ravel()[order], jj.ravel()[order]


def wht_full(patch) -> np.ndarray:
    w = sequency_hadamard(np.shape(patch)[-1])
    return w @ np.asarray(patch, dtype=np.float64) @ w.T


def wht_descriptor(gray, p, patch_size: int = PATCH) -> np.ndarray:
    """First 64 sequency-ordered WHT coefficients of the patch centred at ``p``."""
    gray = np.asarray(gray, dtype=np.float64)
    x, y = int(p[0]), int(p[1])
    half = patch_size // 2
    h, w = gray.shape
    if x - half < 0 or y - half < 0 or x + half > w or y + half > h:
        raise BoundsError(f"patch at {p} exceeds the image")
    ii, jj = coefficient_order(patch_size, N_COEFFS)
    return wht_full(gray[y - half:y + half, x - half:x + half])[ii, jj]


def clamp_patch_center(px, py, w: int, h: int, patch_size: int = PATCH):
    half = patch_size // 2
    return np.clip(px, half, w - half), np.clip(py, half, h - half)


def wht_descriptors(stack: ImageStack, fidx, px, py, chunk: int = 4096) -> np.ndarray:
    """Descriptors for many pixels, patch centres clamped inside the image."""
    fidx = np.asarray(fidx, dtype=np.int64)
    cx, cy = clamp_patch_center(np.asarray(px), np.asarray(py), stack.w, stack.h)
    gray = stack.rgb.astype(np.float32).mean(axis=3)
    w = sequency_hadamard(PATCH).astype(np.float32)
    ii, jj = coefficient_order(PATCH, N_COEFFS)
    off = np.arange(PATCH) - PATCH // 2
    out = np.empty((len(fidx), N_COEFFS), dtype=np.float32)
    for s in range(0, len(fidx), chunk):
        sl = slice(s, s + chunk)
        rows = cy[sl, None] + off[None, :]
        cols = cx[sl, None] + off[None, :]
        patches = gray[fidx[sl, None, None], rows[:, :, None], cols[:, None, :]]
        coeffs = w @ patches @ w.T
        out[sl] = coeffs[:, ii, jj]
    return out
