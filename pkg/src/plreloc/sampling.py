"""General-point and line-segment-point samples with world labels ``m = H x``."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import EmptySampleError, InsufficientPointsError
from .geometry import back_project_many
from .lines import Line3D, LineSegment2D, fit_line3d_ransac_mask, sample_segment_points

GENERAL = "general"
LINE = "line_segment"


@dataclass(frozen=True)
class LineSampleParams:
    spacing: float = 3.0
    ransac_threshold: float = 0.02
    ransac_iterations: int = 100
    min_valid: int = 5
    max_samples: int = 5000


@dataclass(frozen=True, eq=False)
class TrainingSample:
    pixel: tuple[int, int]
    camera_point: np.ndarray
    world_label: np.ndarray | None
    kind: str
    line_id: int | None = None


@dataclass(eq=False)
class SampleSet:
    """Columnar samples from one frame (``fidx`` indexes an image stack later)."""

    px: np.ndarray
    py: np.ndarray
    camera: np.ndarray
    labels: np.ndarray | None
    kind: str
    line_id: np.ndarray = field(default=None)
    fidx: np.ndarray = field(default=None)

    def __post_init__(self):
        n = len(self.px)
        if self.line_id is None:
            self.line_id = np.full(n, -1, dtype=np.int64)
        if self.fidx is None:
            self.fidx = np.zeros(n, dtype=np.int64)

    def __len__(self):
        return len(self.px)

    def __getitem__(self, i) -> TrainingSample:
        lid = int(self.line_id[i])
        return TrainingSample((int(self.px[i]), int(self.py[i])), self.camera[i],
                              None if self.labels is None else self.labels[i], self.kind,
                              lid if lid >= 0 else None)

    def __iter__(self):
        return (self[i] for i in range(len(self)))

    def subset(self, mask) -> SampleSet:
        return SampleSet(self.px[mask], self.py[mask], self.camera[mask],
                         None if self.labels is None else self.labels[mask], self.kind,
                         self.line_id[mask], self.fidx[mask])

    @classmethod
    def concatenate(cls, sets, kind: str) -> SampleSet:
        sets = list(sets)
        if not sets:
            z = np.zeros(0, dtype=np.int64)
            return cls(z, z.copy(), np.zeros((0, 3)), np.zeros((0, 3)), kind)
        labels = None if any(s.labels is None for s in sets) else np.concatenate([s.labels for s in sets])
        return cls(np.concatenate([s.px for s in sets]), np.concatenate([s.py for s in sets]),
                   np.concatenate([s.camera for s in sets]), labels, kind,
                   np.concatenate([s.line_id for s in sets]), np.concatenate([s.fidx for s in sets]))


def _labels(frame, cam):
    return None if frame.pose is None else frame.pose.apply(cam)


def make_general_samples(frame, n: int, rng) -> SampleSet:
    """``n`` valid-depth pixels drawn uniformly without replacement."""
    rng = np.random.default_rng(rng)
    ys, xs = np.nonzero(frame.valid)
    if len(xs) == 0:
        raise EmptySampleError(f"frame {frame.name!r} has no valid depth")
    if n < len(xs):
        pick = np.sort(rng.choice(len(xs), size=n, replace=False))
        xs, ys = xs[pick], ys[pick]
    cam = back_project_many(xs, ys, frame.depth[ys, xs], frame.intrinsics)
    return SampleSet(xs.astype(np.int64), ys.astype(np.int64), cam, _labels(frame, cam), GENERAL)


def make_line_samples(frame, segments: list[LineSegment2D], params: LineSampleParams = LineSampleParams(),
                      rng=0) -> tuple[SampleSet, list[Line3D]]:
    """Back-project points along each segment and keep the 3D-line RANSAC inliers."""
    rng = np.random.default_rng(rng)
    h, w = frame.depth.shape
    K = frame.intrinsics
    pieces, lines, total = [], [], 0
    for sid, seg in enumerate(segments):
        if total >= params.max_samples:
            break
        pts = np.floor(sample_segment_points(seg, params.spacing) + 0.5).astype(np.int64)
        pts[:, 0] = np.clip(pts[:, 0], 0, w - 1)
        pts[:, 1] = np.clip(pts[:, 1], 0, h - 1)
        _, first = np.unique(pts, axis=0, return_index=True)
        pts = pts[np.sort(first)]
        d = frame.depth[pts[:, 1], pts[:, 0]]
        ok = np.isfinite(d)
        if ok.sum() < params.min_valid:
            continue
        pts, d = pts[ok], d[ok]
        cam = back_project_many(pts[:, 0], pts[:, 1], d, K)
        try:
            line, mask = fit_line3d_ransac_mask(cam, params.ransac_threshold,
                                                params.ransac_iterations, rng, sid)
        except InsufficientPointsError:
            continue
        if mask.sum() < params.min_valid:
            continue
        keep = np.nonzero(mask)[0][: params.max_samples - total]
        lid = len(lines)
        lines.append(line)
        pieces.append(SampleSet(pts[keep, 0], pts[keep, 1], cam[keep], _labels(frame, cam[keep]),
                                LINE, np.full(len(keep), lid, dtype=np.int64)))
        total += len(keep)
    if not pieces:
        empty = SampleSet.concatenate([], LINE)
        if frame.pose is None:
            empty.labels = None
        return empty, lines
    return SampleSet.concatenate(pieces, LINE), lines
