#!/usr/bin/env python3
"""Recover a camera pose from noisy 3D-3D constraints.

We build point constraints (camera point, predicted world Gaussians) and
point-on-line constraints around a known pose, corrupt a share of the point
predictions, and let preemptive RANSAC plus Levenberg-Marquardt find the pose.
"""

from __future__ import annotations

import numpy as np

from plreloc.geometry import Gaussian3, kabsch_align, pose_delta, random_transform
from plreloc.lines import Line3D
from plreloc.pose import (LineConstraint, PackedConstraints, PointConstraint, RansacConfig,
                          ransac_from_constraints, refine_lm_detailed)

rng = np.random.default_rng(0)
H = random_transform(rng)  # camera -> world
print("true pose\n", np.round(H.as_matrix(), 3))

# %% three exact correspondences already pin the pose down
x = rng.normal(size=(3, 3))
print("Kabsch error:", pose_delta(kabsch_align(x, H.apply(x)), H))

# %% point constraints: one Gaussian per point, predicted with 2 cm noise
xc = rng.uniform([-1, -1, 1], [1, 1, 4], size=(300, 3))
points = [PointConstraint(p, [Gaussian3(H.apply(p) + rng.normal(0, 0.02, 3), 4e-4 * np.eye(3))])
          for p in xc]

# %% line constraints: the prediction may slide anywhere along the world line
lines = []
for _ in range(100):
    a = rng.uniform([-1, -1, 1.5], [1, 1, 3.5])
    L = Line3D(a, rng.normal(size=3), np.zeros((0, 3)))
    mu = H.apply(a + rng.uniform(-0.3, 0.3) * L.direction) + rng.normal(0, 0.02, 3)
    lines.append(LineConstraint(a, L, [Gaussian3(mu, 4e-4 * np.eye(3))]))

# %% corrupt 40% of the point predictions with uniform gross outliers
P = PackedConstraints.from_points(points).corrupted(0.4, rng, [-3] * 3, [3] * 3)
Lp = PackedConstraints.from_lines(lines)

res = ransac_from_constraints(P, Lp, RansacConfig(n_hypotheses=256), rng)
t, r = pose_delta(res.pose, H)
print(f"RANSAC: {t * 1000:.2f} mm, {r:.3f} deg; inliers {res.inlier_points}/{res.n_points} points, "
      f"{res.inlier_lines}/{res.n_lines} lines")

# %% LM alone from a rough start: the energy never increases
start = random_transform(np.random.default_rng(1), 0.05)
start = type(H)(start.rotation @ H.rotation, H.translation + start.translation)
lm = refine_lm_detailed(start, points, lines)
print("LM energies:", np.round(lm.energies[:6], 2), "...", round(lm.energy, 4))
