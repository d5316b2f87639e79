"""Synthetic pose-estimation constraints with a known ground truth, shared by several test modules."""

from __future__ import annotations

import math

import numpy as np

from plreloc.geometry import Gaussian3, RigidTransform, so3_exp
from plreloc.lines import Line3D
from plreloc.pose import LineConstraint, PointConstraint


def spd(rng, scale=1.0):
    A = rng.normal(size=(3, 3))
    return scale * (A @ A.T + 0.3 * np.eye(3))


def oracle(rng, H, n_points=40, n_lines=20, sigma=0.02, decoys=0):
    """Point and line constraints whose first mode sits exactly at the true label."""
    x = np.column_stack([rng.uniform(-1.5, 1.5, n_points), rng.uniform(-1, 1, n_points),
                         rng.uniform(1, 4, n_points)])
    pts = []
    for xi in x:
        modes = [Gaussian3(H.apply(xi), sigma**2 * spd(rng))]
        modes += [Gaussian3(rng.uniform(-3, 3, 3), sigma**2 * spd(rng)) for _ in range(decoys)]
        pts.append(PointConstraint(xi, modes))
    lines = []
    for _ in range(n_lines):
        a = np.array([rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(1.5, 3.5)])
        v = rng.normal(size=3)
        L = Line3D(a, v, np.zeros((0, 3)))
        xc = a + rng.uniform(-0.5, 0.5) * L.direction
        # any point of the world line is a valid prediction
        mu = H.apply(xc + rng.uniform(-0.3, 0.3) * L.direction)
        lines.append(LineConstraint(xc, L, [Gaussian3(mu, sigma**2 * spd(rng))]))
    return pts, lines


def perturb(H, rng, t=0.05, deg=5.0):
    axis = rng.normal(size=3)
    axis /= np.linalg.norm(axis)
    d = rng.normal(size=3)
    d *= t / np.linalg.norm(d)
    return RigidTransform(so3_exp(math.radians(deg) * axis) @ H.rotation, H.translation + d)


def conjugate(G, C, H, points, lines):
    """Move the world frame by G and the camera frame by C."""
    Ci = C.inverse()
    H2 = G @ H @ Ci
    P = [PointConstraint(C.apply(p.x_c), [Gaussian3(G.apply(m.mean), G.rotation @ m.cov @ G.rotation.T)
                                           for m in p.modes]) for p in points]
    L = [LineConstraint(C.apply(c.x_c),
                        Line3D(C.apply(c.line.point), C.rotation @ c.line.direction, np.zeros((0, 3))),
                        [Gaussian3(G.apply(m.mean), G.rotation @ m.cov @ G.rotation.T) for m in c.modes])
         for c in lines]
    return H2, P, L
