"""Acceptance criteria, one test per criterion.

Each test records a PASS/FAIL line through the ``criterion`` fixture; the
lines are repeated in the terminal summary. Run only this module with
``pytest -m acceptance -s``.
"""

from __future__ import annotations

import dataclasses
import os
import time
from pathlib import Path

import numpy as np
import pytest

from oracles import conjugate, oracle, perturb
from plreloc.config import DatasetConfig, RunConfig, SynthConfig, reduced_config
from plreloc.errors import RelocError
from plreloc.evaluation import TrajectoryPair, ate_rmse, correct_frame_rate
from plreloc.forest import backtrack_tree, gaussian_entropy, information_gain
from plreloc.geometry import RigidTransform, kabsch_align, pose_delta, random_transform
from plreloc.pipeline import (frame_errors, load_sequence, relocalize, synthesize, train_forests)
from plreloc.pose import (PackedConstraints, RansacConfig, frame_constraints,
                          ransac_from_constraints, refine_lm, refine_lm_detailed, total_energy)

pytestmark = pytest.mark.acceptance


def test_synthetic_end_to_end(criterion):
    cfg = reduced_config()
    t0 = time.perf_counter()
    _, train, test = synthesize(cfg)
    pf, lf, _ = train_forests(train, cfg)
    errs = frame_errors(relocalize(test, pf, lf, cfg), test)
    seconds = time.perf_counter() - t0
    rate = correct_frame_rate(errs)
    ok = criterion("synthetic end-to-end", rate >= 0.9 and seconds <= 900,
                   f"{100 * rate:.1f}% of {len(test)} frames within 5 cm / 5 deg "
                   f"(need >= 90%), {seconds:.0f} s (limit 900 s)")
    assert ok


@pytest.fixture(scope="module")
def low_texture():
    """Forests trained on the uniform-wall world, and its test frames."""
    cfg = reduced_config(synth=SynthConfig(textured=False))
    _, train, test = synthesize(cfg)
    pf, lf, _ = train_forests(train, cfg)
    return cfg, pf, lf, test


def _rates(cfg, pf, lf, frames, outlier_fraction):
    q = dataclasses.replace(cfg.query, point_outlier_fraction=outlier_fraction)
    errs = {False: [], True: []}
    for i, f in enumerate(frames):
        P, L = frame_constraints(f, pf, lf, q, np.random.default_rng(i))
        for joint in (False, True):
            try:
                r = ransac_from_constraints(P, L if joint else None, cfg.ransac,
                                            np.random.default_rng(100 + i))
                errs[joint].append(pose_delta(r.pose, f.pose))
            except RelocError:
                errs[joint].append((np.inf, np.inf))
    return correct_frame_rate(errs[False]), correct_frame_rate(errs[True])


def test_lines_help_clean(low_texture, criterion):
    cfg, pf, lf, test = low_texture
    assert len(test) >= 50
    p, j = _rates(cfg, pf, lf, test, 0.0)
    assert criterion("lines help (clean predictions)", j >= p,
                     f"joint {100 * j:.0f}% vs points-only {100 * p:.0f}% over {len(test)} frames "
                     f"(need joint >= points)")


def test_lines_help_corrupted_points(low_texture, criterion):
    cfg, pf, lf, test = low_texture
    assert len(test) >= 50
    p, j = _rates(cfg, pf, lf, test, 0.5)
    assert criterion("lines help (50% point outliers)", j - p >= 0.10,
                     f"joint {100 * j:.0f}% vs points-only {100 * p:.0f}% over {len(test)} frames "
                     f"(need +10 pp)")


def test_kabsch_exactness(rng, criterion):
    worst = 0.0
    for _ in range(100):
        H = random_transform(rng, 3.0)
        x = rng.normal(size=(3, 3))
        est = kabsch_align(x, H.apply(x))
        worst = max(worst, np.linalg.norm(est.rotation - H.rotation),
                    np.linalg.norm(est.translation - H.translation))
    assert criterion("Kabsch exactness", worst <= 1e-9, f"worst error {worst:.2e} over 100 transforms")


def test_entropy_and_gain(rng, criterion):
    # a large standard normal sample has sample covariance close to, but not exactly, I;
    # whiten it so the sample covariance is exactly the identity
    y = rng.normal(size=(5000, 3))
    y -= y.mean(axis=0)
    y = y @ np.linalg.inv(np.linalg.cholesky(np.cov(y, rowvar=False))).T
    h_id = gaussian_entropy(y)
    # scaling by A adds log|det A|
    A = rng.normal(size=(3, 3))
    law = abs(gaussian_entropy(y @ A.T) - h_id - np.log(abs(np.linalg.det(A))))
    z = rng.normal(size=(200, 3))
    degenerate = abs(information_gain(z, z, z[:0]))
    # 4.256816 is the closed form 1.5 ln(2 pi e) rounded to six decimals
    closed = 1.5 * np.log(2 * np.pi * np.e)
    ok = (abs(h_id - closed) <= 1e-9 and abs(h_id - 4.256816) <= 5e-7 and law <= 1e-9
          and degenerate <= 1e-12)
    assert criterion("entropy and gain oracle", ok,
                     f"H(I)={h_id:.9f}, scaling-law error {law:.1e}, degenerate gain {degenerate:.1e}")


def test_backtracking_equals_exhaustive(small_tree, rng, criterion):
    tree, data, _ = small_tree
    q = rng.choice(len(data.px), 1000)
    desc = np.concatenate([data.descriptors[q[:500]],
                           rng.normal(scale=200, size=(500, 64)).astype(np.float32)])
    _, dist = backtrack_tree(tree, data.stack, data.fidx[q], data.px[q], data.py[q], data.depth[q],
                             desc, tree.n_leaves)
    diff = tree.mode_desc[None].astype(np.float64) - desc[:, None].astype(np.float64)
    exhaustive = np.sqrt((diff**2).sum(axis=2)).min(axis=1)
    n_equal = int((dist == exhaustive).sum())
    assert criterion("backtracking oracle", tree.n_leaves <= 64 and n_equal == 1000,
                     f"{n_equal}/1000 queries equal exhaustive search, {tree.n_leaves} leaves")


def test_energy_invariances(rng, criterion):
    worst_inv = 0.0
    for _ in range(100):
        H = random_transform(rng)
        P, L = oracle(rng, H, n_points=10, n_lines=5, sigma=0.3, decoys=2)
        Hq = perturb(H, rng, 0.2, 10)
        H2, P2, L2 = conjugate(random_transform(rng), random_transform(rng), Hq, P, L)
        worst_inv = max(worst_inv, abs(total_energy(Hq, P, L) - total_energy(H2, P2, L2)))
    n_monotone = 0
    for _ in range(100):
        H = random_transform(rng)
        P, L = oracle(rng, H, n_points=15, n_lines=8, decoys=2, sigma=float(rng.uniform(0.005, 0.2)))
        res = refine_lm_detailed(perturb(H, rng, rng.uniform(0, 0.3), rng.uniform(0, 20)), P, L)
        n_monotone += bool(np.all(np.diff(res.energies) <= 0))
    worst_conv = 0.0
    for _ in range(20):
        H = random_transform(rng)
        P, L = oracle(rng, H)
        est = refine_lm(perturb(H, rng, 0.05, 5.0), P, L)
        worst_conv = max(worst_conv, np.abs(est.as_matrix() - H.as_matrix()).max())
    ok = worst_inv <= 1e-9 and n_monotone == 100 and worst_conv <= 1e-6
    assert criterion("energy invariances", ok,
                     f"frame invariance {worst_inv:.1e}, monotone {n_monotone}/100, "
                     f"convergence error {worst_conv:.1e}")


def test_metric_oracles(rng, criterion):
    Q = [random_transform(rng, 3.0) for _ in range(20)]
    ts = np.arange(20.0)
    zero = ate_rmse(TrajectoryPair(ts, Q, Q))
    P = [RigidTransform(H.rotation, H.translation + rng.normal(0, 0.05, 3)) for H in Q]
    base = ate_rmse(TrajectoryPair(ts, P, Q))
    G = random_transform(rng, 10.0)
    offset = abs(ate_rmse(TrajectoryPair(ts, [G @ H for H in P], Q)) - base)
    I = RigidTransform.identity()
    hand = ate_rmse(TrajectoryPair(ts[:2], [RigidTransform(np.eye(3), [3, 0, 0]),
                                             RigidTransform(np.eye(3), [0, 4, 0])], [I, I]), S=I)
    rate = correct_frame_rate([(0.03, 2), (0.06, 1), (0.04, 6)])
    ok = zero <= 1e-9 and offset <= 1e-9 and abs(hand - 3.5355) <= 1e-4 and rate == pytest.approx(1 / 3)
    assert criterion("metric oracles", ok,
                     f"ATE identical {zero:.1e}, offset change {offset:.1e}, hand case {hand:.4f}, "
                     f"rate {rate:.4f}")


def test_ransac_robustness(criterion):
    n_ok = 0
    for trial in range(100):
        rng = np.random.default_rng(trial)
        H = random_transform(rng)
        P, L = oracle(rng, H, n_points=300, n_lines=100, sigma=0.01)
        lo, hi = [-3] * 3, [3] * 3
        Pp = PackedConstraints.from_points(P).corrupted(0.3, rng, lo, hi)
        Lp = PackedConstraints.from_lines(L).corrupted(0.3, rng, lo, hi)
        try:
            res = ransac_from_constraints(Pp, Lp, RansacConfig(), rng)
        except RelocError:
            continue
        t, r = pose_delta(res.pose, H)
        n_ok += t <= 5e-3 and r <= 0.5
    assert criterion("RANSAC robustness", n_ok >= 95,
                     f"{n_ok}/100 trials within 5 mm / 0.5 deg with 30% outliers (need 95)")


CHESS = os.environ.get("PLRELOC_CHESS")


@pytest.mark.skipif(not CHESS, reason="set PLRELOC_CHESS to a 7-Scenes Chess directory with train/ and test/")
def test_chess_full_scale(criterion):
    root = Path(CHESS)
    cfg = RunConfig(dataset=DatasetConfig(kind="7scenes", train=str(root / "train"),
                                          test=str(root / "test"),
                                          intrinsics=dict(fx=585.0, fy=585.0, cx=320.0, cy=240.0,
                                                          width=640, height=480)),
                    threads=os.cpu_count() or 1)
    pf, lf, _ = train_forests(load_sequence(cfg, "train"), cfg)
    test = load_sequence(cfg, "test")
    rate = correct_frame_rate(frame_errors(relocalize(test, pf, lf, cfg), test))
    assert criterion("7-Scenes Chess", rate >= 0.92, f"{100 * rate:.1f}% correct (need 92%)")
