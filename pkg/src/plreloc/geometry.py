"""Rigid transforms, the pinhole camera, Gaussian algebra and absolute orientation.

Conventions: a :class:`RigidTransform` maps points ``x`` to ``R @ x + t``.
Camera poses are camera-to-world, so ``pose.apply(x_cam)`` gives world
coordinates. Camera axes are x right, y down, z forward.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.transform import Rotation

from .errors import (
    BoundsError,
    DegenerateConfigurationError,
    DegenerateCovarianceError,
    InvalidDepthError,
    PoseValidationError,
)

#: Eigenvalue floor (m^2) applied to covariances before inversion or determinants.
COV_EPS = 1e-6

_ORTHO_TOL = 1e-6


def _readonly(a) -> np.ndarray:
    a = np.array(a, dtype=np.float64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RigidTransform:
    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        r = _readonly(self.rotation)
        t = _readonly(self.translation).reshape(3)
        if r.shape != (3, 3):
            raise PoseValidationError(f"rotation must be 3x3, got {r.shape}")
        if not (np.all(np.isfinite(r)) and np.all(np.isfinite(t))):
            raise PoseValidationError("non-finite transform")
        if np.abs(r.T @ r - np.eye(3)).max() > _ORTHO_TOL or np.linalg.det(r) < 0:
            raise PoseValidationError("rotation is not a proper orthonormal matrix")
        t.setflags(write=False)
        object.__setattr__(self, "rotation", r)
        object.__setattr__(self, "translation", t)

    @classmethod
    def identity(cls) -> RigidTransform:
        return cls(np.eye(3), np.zeros(3))

    @classmethod
    def from_matrix(cls, m, det_tol: float = 1e-3) -> RigidTransform:
        """Build from a 4x4 homogeneous matrix, snapping the rotation onto SO(3).

        Matrices whose rotation block has a determinant further than
        ``det_tol`` from one are rejected.
        """
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise PoseValidationError(f"expected 4x4 matrix, got {m.shape}")
        if not np.all(np.isfinite(m)):
            raise PoseValidationError("non-finite pose matrix")
        if np.abs(m[3] - [0, 0, 0, 1]).max() > det_tol:
            raise PoseValidationError("bad homogeneous row")
        r = m[:3, :3]
        if abs(np.linalg.det(r) - 1.0) > det_tol:
            raise PoseValidationError(f"rotation determinant {np.linalg.det(r):.6f} is not 1")
        return cls(project_to_so3(r), m[:3, 3])

    @classmethod
    def from_rotvec(cls, rotvec, translation) -> RigidTransform:
        return cls(so3_exp(rotvec), translation)

    @classmethod
    def from_quaternion(cls, xyzw, translation) -> RigidTransform:
        q = np.asarray(xyzw, dtype=np.float64)
        if not np.isfinite(q).all() or np.linalg.norm(q) < 1e-12:
            raise PoseValidationError("invalid quaternion")
        return cls(Rotation.from_quat(q).as_matrix(), translation)

    def as_quaternion(self) -> np.ndarray:
        """Unit quaternion in (x, y, z, w) order with w >= 0."""
        q = Rotation.from_matrix(self.rotation).as_quat()
        return -q if q[3] < 0 else q

    def as_matrix(self) -> np.ndarray:
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def inverse(self) -> RigidTransform:
        rt = self.rotation.T
        return RigidTransform(rt, -rt @ self.translation)

    def compose(self, other: RigidTransform) -> RigidTransform:
        """``self ∘ other``: apply ``other`` first."""
        return RigidTransform(self.rotation @ other.rotation,
                              self.rotation @ other.translation + self.translation)

    __matmul__ = compose

    def apply(self, x) -> np.ndarray:
        """Transform a single point (3,) or an array of points (N, 3)."""
        x = np.asarray(x, dtype=np.float64)
        return x @ self.rotation.T + self.translation

    def allclose(self, other: RigidTransform, atol: float = 1e-9) -> bool:
        return (np.allclose(self.rotation, other.rotation, rtol=0, atol=atol)
                and np.allclose(self.translation, other.translation, rtol=0, atol=atol))

    def __repr__(self):
        rv = Rotation.from_matrix(self.rotation).as_rotvec()
        return f"RigidTransform(rotvec={np.round(rv, 6).tolist()}, t={np.round(self.translation, 6).tolist()})"


def so3_exp(rotvec) -> np.ndarray:
    """Rodrigues formula for an axis-angle vector."""
    w = np.asarray(rotvec, dtype=np.float64).reshape(3)
    theta = math.sqrt(float(w @ w))
    k = skew(w)
    if theta < 1e-8:
        return np.eye(3) + k + 0.5 * k @ k
    return (np.eye(3) + (math.sin(theta) / theta) * k
            + ((1.0 - math.cos(theta)) / theta**2) * (k @ k))


def so3_log(r) -> np.ndarray:
    return Rotation.from_matrix(np.asarray(r, dtype=np.float64)).as_rotvec()


def skew(v) -> np.ndarray:
    x, y, z = np.asarray(v, dtype=np.float64).reshape(3)
    return np.array([[0.0, -z, y], [z, 0.0, -x], [-y, x, 0.0]])


def project_to_so3(r) -> np.ndarray:
    u, _, vt = np.linalg.svd(np.asarray(r, dtype=np.float64))
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise ValueError("focal lengths must be positive")
        if not (0 < self.cx < self.width and 0 < self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    @property
    def matrix(self) -> np.ndarray:
        return np.array([[self.fx, 0.0, self.cx], [0.0, self.fy, self.cy], [0.0, 0.0, 1.0]])

    def scaled(self, width: int, height: int) -> CameraIntrinsics:
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy, self.cx * sx, self.cy * sy, width, height)

    def to_dict(self) -> dict:
        return {"fx": self.fx, "fy": self.fy, "cx": self.cx, "cy": self.cy,
                "width": self.width, "height": self.height}


@dataclass(frozen=True, eq=False)
class Gaussian3:
    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = _readonly(self.mean).reshape(3)
        cov = _readonly(self.cov)
        if cov.shape != (3, 3):
            raise ValueError("cov must be 3x3")
        if np.abs(cov - cov.T).max() > 1e-12 * max(1.0, np.abs(cov).max()):
            raise ValueError("cov must be symmetric")
        mean.setflags(write=False)
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)


def back_project(p, d: float, K: CameraIntrinsics) -> np.ndarray:
    """Camera-frame point seen at pixel ``p`` with depth ``d`` (meters)."""
    px, py = float(p[0]), float(p[1])
    if not (np.isfinite(d) and d > 0):
        raise InvalidDepthError(f"invalid depth {d!r}")
    if not (0 <= px <= K.width - 1 and 0 <= py <= K.height - 1):
        raise BoundsError(f"pixel ({px}, {py}) outside {K.width}x{K.height} image")
    return np.array([(px - K.cx) * d / K.fx, (py - K.cy) * d / K.fy, d])


def back_project_many(px, py, d, K: CameraIntrinsics) -> np.ndarray:
    """Vectorized :func:`back_project` without validation; returns (N, 3)."""
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    d = np.asarray(d, dtype=np.float64)
    return np.stack([(px - K.cx) * d / K.fx, (py - K.cy) * d / K.fy, d], axis=-1)


def project(x, K: CameraIntrinsics) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    return np.stack([K.fx * x[..., 0] / x[..., 2] + K.cx,
                     K.fy * x[..., 1] / x[..., 2] + K.cy], axis=-1)


def transform_point(H: RigidTransform, x) -> np.ndarray:
    return H.apply(x)


def rotate_covariance(R, cov) -> np.ndarray:
    R = np.asarray(R, dtype=np.float64)
    out = R @ np.asarray(cov, dtype=np.float64) @ np.swapaxes(R, -1, -2)
    return 0.5 * (out + np.swapaxes(out, -1, -2))


def regularize_cov(cov, eps: float = COV_EPS) -> np.ndarray:
    """Symmetrize and floor the eigenvalues of one or more covariances at ``eps``.

    Covariances whose spectrum already sits above the floor are returned
    unchanged (up to symmetrization).
    """
    cov = np.asarray(cov, dtype=np.float64)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    w, v = np.linalg.eigh(cov)
    low = w.min(axis=-1) < eps
    if not np.any(low):
        return cov
    fixed = (v * np.maximum(w, eps)[..., None, :]) @ np.swapaxes(v, -1, -2)
    if cov.ndim == 2:
        return fixed
    return np.where(low[..., None, None], fixed, cov)


def precision_and_logdet(cov, eps: float = COV_EPS):
    """Inverse and log-determinant of regularized covariances."""
    cov = regularize_cov(cov, eps)
    w = np.linalg.eigvalsh(cov)
    if not np.all(np.isfinite(w)) or np.any(w <= 0):
        raise DegenerateCovarianceError("covariance is singular after regularization")
    return np.linalg.inv(cov), np.log(w).sum(axis=-1)


def mahalanobis_sq(x, g: Gaussian3, eps: float = COV_EPS) -> float:
    prec, _ = precision_and_logdet(g.cov, eps)
    r = np.asarray(x, dtype=np.float64) - g.mean
    return max(float(r @ prec @ r), 0.0)


def kabsch_align(camera_points, world_points, rel_tol: float = 1e-9) -> RigidTransform:
    """Least-squares rigid transform taking ``camera_points`` onto ``world_points``.

    Raises DegenerateConfigurationError for fewer than three pairs or a
    collinear configuration (second singular value of the centred camera
    points below ``rel_tol`` times the first).
    """
    a = np.asarray(camera_points, dtype=np.float64).reshape(-1, 3)
    b = np.asarray(world_points, dtype=np.float64).reshape(-1, 3)
    if len(a) != len(b):
        raise ValueError("point sets differ in length")
    if len(a) < 3:
        raise DegenerateConfigurationError(f"need at least 3 pairs, got {len(a)}")
    ca, cb = a.mean(axis=0), b.mean(axis=0)
    a0, b0 = a - ca, b - cb
    for pts in (a0, b0):
        s = np.linalg.svd(pts, compute_uv=False)
        if s[0] <= 1e-12 or s[1] <= rel_tol * s[0]:
            raise DegenerateConfigurationError("collinear or coincident points")
    u, _, vt = np.linalg.svd(b0.T @ a0)
    d = np.sign(np.linalg.det(u @ vt))
    r = u @ np.diag([1.0, 1.0, d]) @ vt
    return RigidTransform(r, cb - r @ ca)


def rotation_angle_deg(r_a, r_b) -> float:
    """Angle of the relative rotation between two rotation matrices."""
    c = (np.trace(np.asarray(r_b).T @ np.asarray(r_a)) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def pose_delta(H_est: RigidTransform, H_gt: RigidTransform) -> tuple[float, float]:
    """(translation error in meters, angular error in degrees)."""
    terr = float(np.linalg.norm(H_est.translation - H_gt.translation))
    return terr, rotation_angle_deg(H_est.rotation, H_gt.rotation)


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    q = rng.normal(size=4)
    return Rotation.from_quat(q / np.linalg.norm(q)).as_matrix()


def random_transform(rng: np.random.Generator, scale: float = 1.0) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.normal(scale=scale, size=3))
