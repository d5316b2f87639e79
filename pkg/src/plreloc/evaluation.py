"""Relocalization metrics: correct-frame rate, median errors and aligned ATE."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import DegenerateConfigurationError, EmptyInputError, ParseError
from .geometry import RigidTransform, pose_delta


def _as_errors(errors) -> np.ndarray:
    e = np.asarray(errors, dtype=np.float64).reshape(-1, 2) if len(errors) else np.zeros((0, 2))
    if len(e) == 0:
        raise EmptyInputError("no errors given")
    return e


def correct_frame_rate(errors, t_max: float = 0.05, r_max: float = 5.0) -> float:
    """Fraction of (meters, degrees) pairs within both thresholds (inclusive)."""
    e = _as_errors(errors)
    return float(np.mean((e[:, 0] <= t_max) & (e[:, 1] <= r_max)))


def median_errors(errors) -> tuple[float, float]:
    e = _as_errors(errors)
    m = np.median(e, axis=0)
    return float(m[0]), float(m[1])


def pose_errors(estimates, truths) -> list[tuple[float, float]]:
    return [pose_delta(a, b) for a, b in zip(estimates, truths)]


@dataclass(frozen=True, eq=False)
class TrajectoryPair:
    """Associated estimated (P) and ground-truth (Q) poses sharing timestamps."""

    timestamps: np.ndarray
    estimated: list
    truth: list

    def __post_init__(self):
        if len(self.estimated) != len(self.truth) or len(self.truth) != len(self.timestamps):
            raise ValueError("trajectory lengths differ")
        if np.any(np.diff(self.timestamps) <= 0):
            raise ValueError("timestamps must be strictly increasing")

    def __len__(self):
        return len(self.truth)


def horn_align(pair: TrajectoryPair) -> RigidTransform:
    """Rigid S minimising sum ||trans(Q_i) - S trans(P_i)||^2 (unit quaternion method)."""
    p = np.array([H.translation for H in pair.estimated]).reshape(-1, 3)
    q = np.array([H.translation for H in pair.truth]).reshape(-1, 3)
    if len(p) < 3:
        raise DegenerateConfigurationError("alignment needs at least three poses")
    pc, qc = p.mean(axis=0), q.mean(axis=0)
    p0, q0 = p - pc, q - qc
    for pts in (p0, q0):
        s = np.linalg.svd(pts, compute_uv=False)
        if s[0] <= 1e-12 or s[1] <= 1e-9 * s[0]:
            raise DegenerateConfigurationError("positions are collinear or coincident")
    M = p0.T @ q0
    (sxx, sxy, sxz), (syx, syy, syz), (szx, szy, szz) = M
    N = np.array([
        [sxx + syy + szz, syz - szy, szx - sxz, sxy - syx],
        [syz - szy, sxx - syy - szz, sxy + syx, szx + sxz],
        [szx - sxz, sxy + syx, -sxx + syy - szz, syz + szy],
        [sxy - syx, szx + sxz, syz + szy, -sxx - syy + szz],
    ])
    _, vecs = np.linalg.eigh(N)
    w, x, y, z = vecs[:, -1]
    R = np.array([
        [w * w + x * x - y * y - z * z, 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), w * w - x * x + y * y - z * z, 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), w * w - x * x - y * y + z * z],
    ])
    return RigidTransform(R, qc - R @ pc)


def ate_rmse(pair: TrajectoryPair, S: RigidTransform | None = None) -> float:
    """RMSE of trans(Q_i^-1 S P_i); ``S`` defaults to the Horn alignment."""
    if len(pair) == 0:
        raise EmptyInputError("empty trajectory")
    S = horn_align(pair) if S is None else S
    t = np.array([(Q.inverse() @ S @ P).translation for P, Q in zip(pair.estimated, pair.truth)])
    return float(np.sqrt(np.mean((t**2).sum(axis=1))))


# ---------------------------------------------------------------------- I/O

def read_trajectory(path) -> list[tuple[float, RigidTransform]]:
    """Parse ``timestamp tx ty tz qx qy qz qw`` lines; '#' starts a comment."""
    out = []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        s = line.strip()
        if not s or s.startswith("#"):
            continue
        parts = s.split()
        if len(parts) != 8:
            raise ParseError(path, lineno, f"expected 8 fields, got {len(parts)}")
        try:
            v = [float(x) for x in parts]
        except ValueError:
            raise ParseError(path, lineno, f"non-numeric field in {s!r}") from None
        q = np.array(v[4:8])
        if not np.isfinite(v).all() or not 0.5 < np.linalg.norm(q) < 1.5:
            raise ParseError(path, lineno, "invalid pose values")
        out.append((v[0], RigidTransform.from_quaternion(q, v[1:4])))
    return out


def format_pose(timestamp: float, H: RigidTransform) -> str:
    q = H.as_quaternion()
    vals = [timestamp, *H.translation, *q]
    return " ".join(f"{x:.9f}" if i == 0 else f"{x:.10g}" for i, x in enumerate(vals))


def write_trajectory(path, poses) -> None:
    Path(path).write_text("".join(format_pose(t, H) + "\n" for t, H in poses))


def associate(estimated, truth, max_gap: float = 0.02) -> TrajectoryPair:
    """Pair each estimate with the nearest ground-truth timestamp within ``max_gap``."""
    if not estimated or not truth:
        raise EmptyInputError("cannot associate an empty trajectory")
    gt_t = np.array([t for t, _ in truth])
    ts, P, Q, used = [], [], [], set()
    for t, H in sorted(estimated, key=lambda x: x[0]):
        j = int(np.argmin(np.abs(gt_t - t)))
        if abs(gt_t[j] - t) <= max_gap and j not in used and (not ts or t > ts[-1]):
            used.add(j)
            ts.append(t)
            P.append(H)
            Q.append(truth[j][1])
    if not ts:
        raise EmptyInputError("no estimated pose matches a ground-truth timestamp")
    return TrajectoryPair(np.array(ts), P, Q)


@dataclass(frozen=True)
class MetricsReport:
    n_frames: int
    n_estimated: int
    correct_rate: float
    median_translation: float
    median_rotation: float
    ate_rmse: float | None

    def to_text(self) -> str:
        ate = "nan" if self.ate_rmse is None else f"{self.ate_rmse:.6f}"
        return (f"frames: {self.n_frames}\n"
                f"estimated: {self.n_estimated}\n"
                f"correct_percent: {100 * self.correct_rate:.2f}\n"
                f"median_translation_m: {self.median_translation:.6f}\n"
                f"median_rotation_deg: {self.median_rotation:.6f}\n"
                f"ate_rmse_m: {ate}\n")


def evaluate_trajectories(estimated, truth, max_gap: float = 0.02) -> MetricsReport:
    """Metrics over associated poses; frames missing from ``estimated`` count as failures."""
    pair = associate(estimated, truth, max_gap)
    errs = pose_errors(pair.estimated, pair.truth)
    n_missing = len(truth) - len(pair)
    all_errs = errs + [(np.inf, np.inf)] * n_missing
    try:
        ate = ate_rmse(pair)
    except DegenerateConfigurationError:
        ate = None
    mt, mr = median_errors(all_errs)
    return MetricsReport(len(truth), len(pair), correct_frame_rate(all_errs), mt, mr, ate)
