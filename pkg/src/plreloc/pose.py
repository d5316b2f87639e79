"""Camera pose from scene-coordinate predictions.

Point constraints pair a camera-frame point with candidate world Gaussians;
line constraints additionally carry the camera-frame 3D line the point was
sampled from, and only penalise the offset perpendicular to that line. Poses
are camera-to-world: ``y = R x + t``.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import (DegenerateConfigurationError, EmptySampleError, HypothesisGenerationError,
                     InsufficientPointsError, InvalidStartError, RelocalizationFailure)
from .geometry import COV_EPS, Gaussian3, RigidTransform, kabsch_align, regularize_cov, so3_exp
from .lines import Line3D

_PAD_COST = np.inf


@dataclass(frozen=True, eq=False)
class PointConstraint:
    x_c: np.ndarray
    modes: list

    def __post_init__(self):
        if len(self.modes) == 0:
            raise ValueError("a constraint needs at least one candidate mode")
        object.__setattr__(self, "x_c", np.asarray(self.x_c, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class LineConstraint:
    """``x_c`` is the sampled camera point used for mode selection; ``line`` is camera-frame."""

    x_c: np.ndarray
    line: Line3D
    modes: list

    def __post_init__(self):
        if len(self.modes) == 0:
            raise ValueError("a constraint needs at least one candidate mode")
        object.__setattr__(self, "x_c", np.asarray(self.x_c, dtype=np.float64))


@dataclass(frozen=True, eq=False)
class PoseHypothesis:
    pose: RigidTransform
    energy: float = 0.0
    samples_seen: int = 0


@dataclass(frozen=True)
class LMConfig:
    max_iterations: int = 100
    energy_tol: float = 1e-9
    step_tol: float = 1e-10
    lambda0: float = 1e-4


@dataclass(frozen=True)
class RansacConfig:
    n_hypotheses: int = 1024
    batch_size: int = 500
    truncation: float = 10.0
    # pairwise-distance consistency test on the three sampled correspondences (meters)
    rigidity_tol: float | None = 0.05
    draws_per_hypothesis: int = 1024
    max_retries: int = 1000
    inlier_rounds: int = 5
    lm: LMConfig = field(default_factory=LMConfig)


# ------------------------------------------------------------ packed storage

@dataclass(eq=False)
class PackedConstraints:
    """Array form of point or line constraints, modes padded to a common count.

    ``white[n, k]`` satisfies ``white.T @ white = inv(cov)`` so squared
    Mahalanobis distances are plain squared norms of ``white @ r``. Padded
    modes have ``cost = inf`` and are never selected.
    """

    x_c: np.ndarray
    means: np.ndarray
    white: np.ndarray
    logdet: np.ndarray
    line_a: np.ndarray | None = None
    line_v: np.ndarray | None = None

    @property
    def is_line(self) -> bool:
        return self.line_a is not None

    def __len__(self):
        return len(self.x_c)

    @property
    def n_modes(self) -> np.ndarray:
        return np.isfinite(self.logdet).sum(axis=1)

    def subset(self, idx) -> PackedConstraints:
        return PackedConstraints(self.x_c[idx], self.means[idx], self.white[idx], self.logdet[idx],
                                 None if self.line_a is None else self.line_a[idx],
                                 None if self.line_v is None else self.line_v[idx])

    @classmethod
    def from_arrays(cls, x_c, means, covs, line_a=None, line_v=None, valid=None,
                    eps: float = COV_EPS) -> PackedConstraints:
        x_c = np.asarray(x_c, dtype=np.float64).reshape(-1, 3)
        means = np.asarray(means, dtype=np.float64)
        covs = np.asarray(covs, dtype=np.float64)
        if means.ndim == 2:
            means, covs = means[:, None], covs[:, None]
        n, m = means.shape[:2]
        valid = np.ones((n, m), dtype=bool) if valid is None else np.asarray(valid, dtype=bool)
        covs = np.where(valid[..., None, None], covs, np.eye(3))
        covs = regularize_cov(covs, eps)
        w, v = np.linalg.eigh(covs)
        # inv(cov) = v diag(1/w) v^T = white^T white with white = diag(w^-1/2) v^T
        white = np.swapaxes(v, -1, -2) / np.sqrt(w)[..., :, None]
        logdet = np.where(valid, np.log(w).sum(axis=-1), _PAD_COST)
        if line_a is not None:
            line_a = np.asarray(line_a, dtype=np.float64).reshape(-1, 3)
            line_v = np.asarray(line_v, dtype=np.float64).reshape(-1, 3)
            line_v = line_v / np.linalg.norm(line_v, axis=1, keepdims=True)
        return cls(x_c, means, white, logdet, line_a, line_v)

    @classmethod
    def empty(cls, line: bool = False) -> PackedConstraints:
        z = np.zeros((0, 3))
        return cls.from_arrays(z, np.zeros((0, 1, 3)), np.zeros((0, 1, 3, 3)),
                               z if line else None, z if line else None)

    @classmethod
    def from_points(cls, constraints) -> PackedConstraints:
        constraints = list(constraints)
        if not constraints:
            return cls.empty()
        x, mu, cov, ok = _pad_modes(constraints)
        return cls.from_arrays(x, mu, cov, valid=ok)

    @classmethod
    def from_lines(cls, constraints) -> PackedConstraints:
        constraints = list(constraints)
        if not constraints:
            return cls.empty(line=True)
        x, mu, cov, ok = _pad_modes(constraints)
        return cls.from_arrays(x, mu, cov, [c.line.point for c in constraints],
                               [c.line.direction for c in constraints], valid=ok)

    def corrupted(self, fraction: float, rng, low, high) -> PackedConstraints:
        """Copy with ``fraction`` of constraints given uniform random mode means in a box."""
        rng = np.random.default_rng(rng)
        n = len(self)
        k = int(round(fraction * n))
        pick = rng.choice(n, size=k, replace=False)
        means = self.means.copy()
        means[pick] = rng.uniform(low, high, size=(k, means.shape[1], 3))
        return PackedConstraints(self.x_c, means, self.white, self.logdet, self.line_a, self.line_v)


def _pad_modes(constraints):
    m = max(len(c.modes) for c in constraints)
    n = len(constraints)
    mu, cov = np.zeros((n, m, 3)), np.tile(np.eye(3), (n, m, 1, 1))
    ok = np.zeros((n, m), dtype=bool)
    for i, c in enumerate(constraints):
        for j, g in enumerate(c.modes):
            mu[i, j], cov[i, j], ok[i, j] = g.mean, g.cov, True
    return np.array([c.x_c for c in constraints]).reshape(n, 3), mu, cov, ok


def _as_packed(c, line: bool) -> PackedConstraints:
    if isinstance(c, PackedConstraints):
        return c
    if c is None:
        return PackedConstraints.empty(line)
    return PackedConstraints.from_lines(c) if line else PackedConstraints.from_points(c)


# ----------------------------------------------------------- energy kernels

def _select(R, t, C: PackedConstraints):
    """Mode indices maximising the Gaussian density of the transformed points.

    ``R`` is (..., 3, 3) and ``t`` (..., 3); leading dims broadcast against
    the constraint axis as (..., N). Returns (sel, y) with y = R x + t.
    """
    y = np.einsum("...ij,nj->...ni", R, C.x_c) + t[..., None, :]
    r = y[..., :, None, :] - C.means
    wr = np.einsum("nkij,...nkj->...nki", C.white, r)
    cost = (wr**2).sum(axis=-1) + C.logdet
    return np.argmin(cost, axis=-1), y


def _residuals(R, t, C: PackedConstraints):
    """Whitened residual vectors (..., N, 3) with density-based mode selection at (R, t)."""
    sel, y = _select(R, t, C)
    n = np.arange(len(C))
    mu = C.means[n, sel]
    W = C.white[n, sel]
    if not C.is_line:
        d = y - mu
    else:
        # perpendicular offset of the prediction from the transformed line
        a_w = np.einsum("...ij,nj->...ni", R, C.line_a) + t[..., None, :]
        w = np.einsum("...ij,nj->...ni", R, C.line_v)
        q = mu - a_w
        d = q - (q * w).sum(axis=-1, keepdims=True) * w
    return np.einsum("...nij,...nj->...ni", W, d), sel


def _terms(R, t, C: PackedConstraints) -> np.ndarray:
    if len(C) == 0:
        return np.zeros(np.shape(t)[:-1] + (0,))
    r, _ = _residuals(R, t, C)
    return (r**2).sum(axis=-1)


def select_best_mode(H: RigidTransform, x_c, modes, eps: float = COV_EPS) -> Gaussian3:
    """Mode with the highest Gaussian density at ``H x_c`` (ties: lowest index)."""
    if len(modes) == 0:
        raise ValueError("no candidate modes")
    C = PackedConstraints.from_points([PointConstraint(x_c, list(modes))])
    sel, _ = _select(H.rotation, H.translation, C)
    return modes[int(sel[0])]


def energy_points(H: RigidTransform, constraints, rho: float = math.inf) -> float:
    C = _as_packed(constraints, line=False)
    return float(np.minimum(_terms(H.rotation, H.translation, C), rho).sum())


def energy_lines(H: RigidTransform, constraints, rho: float = math.inf) -> float:
    C = _as_packed(constraints, line=True)
    return float(np.minimum(_terms(H.rotation, H.translation, C), rho).sum())


def total_energy(H: RigidTransform, points, lines, rho: float = math.inf) -> float:
    return energy_points(H, points, rho) + energy_lines(H, lines, rho)


# --------------------------------------------------------------- refinement

@dataclass(frozen=True, eq=False)
class LMResult:
    pose: RigidTransform
    energy: float
    initial_energy: float
    iterations: int
    accepted: int
    energies: list


def _jacobian(R, t, C: PackedConstraints, sel) -> np.ndarray:
    """d(white residual)/d(omega, rho) for the left update R <- exp(omega) R, t <- t + rho."""
    n = np.arange(len(C))
    W = C.white[n, sel]
    J = np.empty((len(C), 3, 6))
    if not C.is_line:
        Rx = C.x_c @ R.T
        J[:, :, :3] = -_skew_many(Rx)
        J[:, :, 3:] = np.eye(3)
    else:
        Ra = C.line_a @ R.T
        w = C.line_v @ R.T
        q = C.means[n, sel] - Ra - t
        P = np.eye(3) - w[:, :, None] * w[:, None, :]
        wq = (w * q).sum(axis=1)
        J[:, :, :3] = (P @ _skew_many(Ra)
                       + (wq[:, None, None] * np.eye(3) + w[:, :, None] * q[:, None, :]) @ _skew_many(w))
        J[:, :, 3:] = -P
    return np.einsum("nij,njk->nik", W, J)


def _skew_many(v: np.ndarray) -> np.ndarray:
    out = np.zeros(v.shape[:-1] + (3, 3))
    out[..., 0, 1], out[..., 0, 2] = -v[..., 2], v[..., 1]
    out[..., 1, 0], out[..., 1, 2] = v[..., 2], -v[..., 0]
    out[..., 2, 0], out[..., 2, 1] = -v[..., 1], v[..., 0]
    return out


def refine_lm_detailed(H0: RigidTransform, points, lines=None, config: LMConfig = LMConfig()) -> LMResult:
    """Levenberg-Marquardt on the untruncated joint energy.

    Modes are re-selected at every evaluated pose. A step is accepted only if
    it strictly lowers the energy; iteration stops when an accepted step gains
    less than ``energy_tol``, the step norm drops below ``step_tol``, or after
    ``max_iterations``.
    """
    P = _as_packed(points, line=False)
    L = _as_packed(lines, line=True)
    if len(P) < 3:
        raise InsufficientPointsError(f"refinement needs 3 point constraints, got {len(P)}")

    def evaluate(R, t):
        return float(_terms(R, t, P).sum() + _terms(R, t, L).sum())

    R, t = H0.rotation.copy(), H0.translation.copy()
    E = evaluate(R, t)
    if not math.isfinite(E):
        raise InvalidStartError("energy at the initial pose is not finite")
    E0, lam, energies, accepted, it = E, config.lambda0, [E], 0, 0
    for it in range(1, config.max_iterations + 1):
        blocks_r, blocks_j = [], []
        for C in (P, L):
            if len(C):
                r, sel = _residuals(R, t, C)
                blocks_r.append(r.reshape(-1))
                blocks_j.append(_jacobian(R, t, C, sel).reshape(-1, 6))
        r, J = np.concatenate(blocks_r), np.concatenate(blocks_j)
        A, g = J.T @ J, J.T @ r
        D = np.diag(np.diag(A) + 1e-12)
        try:
            step = -np.linalg.solve(A + lam * D, g)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(A + lam * D, g, rcond=None)[0]
        if not np.all(np.isfinite(step)) or np.linalg.norm(step) < config.step_tol:
            break
        R_new = so3_exp(step[:3]) @ R
        t_new = t + step[3:]
        E_new = evaluate(R_new, t_new)
        if E_new < E:
            gain = E - E_new
            R, t, E = R_new, t_new, E_new
            energies.append(E)
            accepted += 1
            lam = max(lam / 10, 1e-12)
            if gain < config.energy_tol:
                break
        else:
            lam *= 10
            if lam > 1e12:
                break
    return LMResult(RigidTransform(R, t), E, E0, it, accepted, energies)


def refine_lm(H0: RigidTransform, points, lines=None, config: LMConfig = LMConfig()) -> RigidTransform:
    return refine_lm_detailed(H0, points, lines, config).pose


# ---------------------------------------------------------------- hypotheses

def _kabsch_batch(X: np.ndarray, Y: np.ndarray):
    """Rotations and translations mapping each (3, 3) point triple X[i] onto Y[i]."""
    cx, cy = X.mean(axis=1), Y.mean(axis=1)
    M = np.einsum("nki,nkj->nij", Y - cy[:, None], X - cx[:, None])
    u, _, vt = np.linalg.svd(M)
    d = np.sign(np.linalg.det(u @ vt))
    d[d == 0] = 1.0
    u = u.copy()
    u[:, :, 2] *= d[:, None]
    R = u @ vt
    return R, cy - np.einsum("nij,nj->ni", R, cx)


def _nondegenerate(P: np.ndarray, rel_tol: float = 1e-9) -> np.ndarray:
    s = np.linalg.svd(P - P.mean(axis=1, keepdims=True), compute_uv=False)
    return (s[:, 0] > 1e-12) & (s[:, 1] > rel_tol * s[:, 0])


def _draw_triples(rng, n: int, count: int) -> np.ndarray:
    i = rng.integers(0, n, size=(count, 3))
    ok = (i[:, 0] != i[:, 1]) & (i[:, 0] != i[:, 2]) & (i[:, 1] != i[:, 2])
    return i[ok]


def generate_hypothesis(points, rng, max_retries: int = 1000) -> PoseHypothesis:
    """Kabsch pose from three random point constraints, one random mode each."""
    C = _as_packed(points, line=False)
    if len(C) < 3:
        raise HypothesisGenerationError(f"need 3 point constraints, got {len(C)}")
    rng = np.random.default_rng(rng)
    nm = C.n_modes
    for _ in range(max_retries):
        idx = rng.choice(len(C), size=3, replace=False)
        k = rng.integers(0, nm[idx])
        try:
            H = kabsch_align(C.x_c[idx], C.means[idx, k])
        except DegenerateConfigurationError:
            continue
        return PoseHypothesis(H)
    raise HypothesisGenerationError(f"no non-degenerate triple after {max_retries} draws")


def generate_hypotheses(points, n: int, rng, rigidity_tol: float | None = 0.05,
                        draws_per_hypothesis: int = 1024, max_retries: int = 1000):
    """Up to ``n`` Kabsch hypotheses as (R, t) stacks.

    With ``rigidity_tol`` set, triples whose camera and world pairwise
    distances disagree by more than the tolerance are discarded before
    solving; if none pass within the draw budget, the test is dropped.
    """
    C = _as_packed(points, line=False)
    if len(C) < 3:
        raise HypothesisGenerationError(f"need 3 point constraints, got {len(C)}")
    rng = np.random.default_rng(rng)
    nm = C.n_modes
    budget = max(n * draws_per_hypothesis, max_retries)
    got_X, got_Y, total, drawn = [], [], 0, 0
    while total < n and drawn < budget:
        chunk = min(max(4 * (n - total), 65536), budget - drawn)
        drawn += chunk
        idx = _draw_triples(rng, len(C), chunk)
        k = rng.integers(0, nm[idx])
        X, Y = C.x_c[idx], C.means[idx, k]
        ok = _nondegenerate(X) & _nondegenerate(Y)
        if rigidity_tol is not None:
            for a, b in ((0, 1), (0, 2), (1, 2)):
                dx = np.linalg.norm(X[:, a] - X[:, b], axis=1)
                dy = np.linalg.norm(Y[:, a] - Y[:, b], axis=1)
                ok &= np.abs(dx - dy) <= rigidity_tol
        got_X.append(X[ok])
        got_Y.append(Y[ok])
        total += int(ok.sum())
    if total == 0:
        if rigidity_tol is not None:
            return generate_hypotheses(C, n, rng, None, draws_per_hypothesis, max_retries)
        raise HypothesisGenerationError(f"no non-degenerate triple after {drawn} draws")
    X, Y = np.concatenate(got_X)[:n], np.concatenate(got_Y)[:n]
    return _kabsch_batch(X, Y)


# ------------------------------------------------------------------- RANSAC

@dataclass(frozen=True, eq=False)
class RansacResult:
    pose: RigidTransform
    hypothesis: PoseHypothesis
    energy: float
    n_hypotheses: int
    n_points: int
    n_lines: int
    inlier_points: int = 0
    inlier_lines: int = 0
    refined: bool = False
    warning: str | None = None


def _batches(rng, total: int, size: int):
    order = rng.permutation(total)
    pos = 0
    while True:
        if pos < total:
            b = order[pos:pos + size]
            pos += size
            if len(b) < size:
                b = np.concatenate([b, rng.integers(0, total, size=size - len(b))])
        else:
            b = rng.integers(0, total, size=size)
        yield b


def preemptive_schedule(Rs, ts, points, lines, config: RansacConfig, rng):
    """Halving preemption; returns (survivor index, accumulated energies, samples seen)."""
    P = _as_packed(points, line=False)
    L = _as_packed(lines, line=True)
    n_total = len(P) + len(L)
    energies = np.zeros(len(Rs))
    alive = np.arange(len(Rs))
    seen = 0
    batches = _batches(rng, n_total, min(config.batch_size, n_total))
    while len(alive) > 1:
        b = next(batches)
        bp, bl = b[b < len(P)], b[b >= len(P)] - len(P)
        R, t = Rs[alive], ts[alive]
        e = np.minimum(_terms(R, t, P.subset(bp)), config.truncation).sum(axis=-1)
        if len(bl):
            e = e + np.minimum(_terms(R, t, L.subset(bl)), config.truncation).sum(axis=-1)
        energies[alive] += e
        seen += len(b)
        order = np.argsort(energies[alive], kind="stable")
        alive = alive[order[:max(1, len(alive) // 2)]]
    return int(alive[0]), energies, seen


def ransac_from_constraints(points, lines=None, config: RansacConfig = RansacConfig(),
                            rng=0) -> RansacResult:
    """Preemptive RANSAC over Kabsch hypotheses, then LM on the inlier constraints.

    Refinement alternates between LM on constraints whose untruncated term
    is below the truncation threshold and recomputing that inlier set.
    """
    rng = np.random.default_rng(rng)
    P = _as_packed(points, line=False)
    L = _as_packed(lines, line=True)
    if len(P) < 3:
        raise RelocalizationFailure(f"only {len(P)} usable point constraints")
    try:
        Rs, ts = generate_hypotheses(P, config.n_hypotheses, rng, config.rigidity_tol,
                                     config.draws_per_hypothesis, config.max_retries)
    except HypothesisGenerationError as e:
        raise RelocalizationFailure(str(e)) from e
    best, energies, seen = preemptive_schedule(Rs, ts, P, L, config, rng)
    hyp = PoseHypothesis(RigidTransform(Rs[best], ts[best]), float(energies[best]), seen)

    H, warning, refined = hyp.pose, None, False
    prev = None
    ip = il = np.zeros(0, dtype=bool)
    for _ in range(config.inlier_rounds):
        ip = _terms(H.rotation, H.translation, P) < config.truncation
        il = _terms(H.rotation, H.translation, L) < config.truncation
        key = (ip.tobytes(), il.tobytes())
        if key == prev:
            break
        prev = key
        if ip.sum() < 3:
            warning = "too few inliers to refine"
            break
        try:
            res = refine_lm_detailed(H, P.subset(ip), L.subset(il), config.lm)
        except (InvalidStartError, np.linalg.LinAlgError) as e:
            warning = f"refinement failed: {e}"
            break
        H, refined = res.pose, True
    if warning:
        warnings.warn(warning, RuntimeWarning, stacklevel=2)
    energy = float(np.minimum(_terms(H.rotation, H.translation, P), config.truncation).sum()
                   + np.minimum(_terms(H.rotation, H.translation, L), config.truncation).sum())
    return RansacResult(H, hyp, energy, len(Rs), len(P), len(L), int(ip.sum()), int(il.sum()),
                        refined, warning)


# ---------------------------------------------------------- frame front end

@dataclass(frozen=True)
class QueryConfig:
    """How many test pixels of each kind to predict per frame."""

    n_point_pixels: int = 3000
    n_line_samples: int = 3000
    line_spacing: float = 1.0
    point_outlier_fraction: float = 0.0
    # eigenvalue floor (m^2) applied to predicted covariances before pose estimation
    cov_floor: float = 4e-4


def frame_constraints(frame, point_forest, line_forest=None, query: QueryConfig = QueryConfig(),
                      rng=0, segments=None):
    """Predict packed point and line constraints for one RGB-D frame."""
    from .features import ImageStack, wht_descriptors
    from .lines import detect_segments
    from .sampling import LineSampleParams, make_general_samples, make_line_samples

    rng = np.random.default_rng(rng)
    frame = frame.without_pose()
    stack = ImageStack.from_frames([frame])
    try:
        S = make_general_samples(frame, query.n_point_pixels, rng)
    except EmptySampleError as e:
        raise RelocalizationFailure(str(e)) from e
    desc = wht_descriptors(stack, S.fidx, S.px, S.py)
    pred = point_forest.predict(stack, S.fidx, S.px, S.py, desc)
    P = PackedConstraints.from_arrays(S.camera, pred.means, pred.covs, eps=query.cov_floor)
    if query.point_outlier_fraction > 0 and len(P):
        flat = pred.means.reshape(-1, 3)
        P = P.corrupted(query.point_outlier_fraction, rng, flat.min(axis=0), flat.max(axis=0))
    L = PackedConstraints.empty(line=True)
    if line_forest is not None:
        if segments is None:
            segments = detect_segments(frame.gray)
        params = LineSampleParams(spacing=query.line_spacing, max_samples=query.n_line_samples)
        LS, lines3d = make_line_samples(frame, segments, params, rng)
        if len(LS):
            ld = wht_descriptors(stack, LS.fidx, LS.px, LS.py)
            lp = line_forest.predict(stack, LS.fidx, LS.px, LS.py, ld)
            a = np.array([lines3d[i].point for i in LS.line_id])
            v = np.array([lines3d[i].direction for i in LS.line_id])
            L = PackedConstraints.from_arrays(LS.camera, lp.means, lp.covs, a, v, eps=query.cov_floor)
    return P, L


def preemptive_ransac(frame, point_forest, line_forest=None, config: RansacConfig = RansacConfig(),
                      query: QueryConfig = QueryConfig(), rng=0, segments=None) -> RansacResult:
    """Relocalize a single RGB-D frame from forest predictions."""
    rng = np.random.default_rng(rng)
    P, L = frame_constraints(frame, point_forest, line_forest, query, rng, segments)
    return ransac_from_constraints(P, L, config, rng)
