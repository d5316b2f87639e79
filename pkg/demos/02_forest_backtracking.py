#!/usr/bin/env python3
"""Train one small regression tree on synthetic frames and query it.

Each leaf stores a few Gaussian modes of world coordinates together with a
mean WHT patch descriptor. Backtracking visits further leaves in order of how
close each test response was to its split threshold and keeps the mode whose
descriptor best matches the query.
"""

from __future__ import annotations

import numpy as np

from plreloc.data_io import look_at, make_room_world, render_frame
from plreloc.features import ImageStack, wht_descriptors
from plreloc.forest import ForestConfig, TrainingData, backtrack_tree, gaussian_entropy, train_tree
from plreloc.geometry import CameraIntrinsics
from plreloc.sampling import make_general_samples

K = CameraIntrinsics(100.0, 100.0, 40.0, 30.0, 80, 60)
world = make_room_world(0, textured=True, cell=0.4)
poses = [look_at([0.3 * np.cos(a), 0.3 * np.sin(a), 1.4], [2 * np.cos(a), 2 * np.sin(a), 1.3])
         for a in np.linspace(0, 1.0, 6)]
frames = [render_frame(world, p, K, float(i), f"f{i}") for i, p in enumerate(poses)]
stack = ImageStack.from_frames(frames)

# %% gather pixels with world-coordinate labels
rng = np.random.default_rng(3)
sets = [make_general_samples(f, 400, rng) for f in frames]
fidx = np.concatenate([np.full(len(s), i) for i, s in enumerate(sets)])
px = np.concatenate([s.px for s in sets])
py = np.concatenate([s.py for s in sets])
labels = np.concatenate([s.labels for s in sets])
desc = wht_descriptors(stack, fidx, px, py)
print("root label entropy (nats):", round(gaussian_entropy(labels), 3))

# %% train
cfg = ForestConfig(n_trees=1, max_depth=6, min_node_size=40, n_candidates=60, min_mode_weight=5)
tree = train_tree(TrainingData(stack, fidx, px, py, labels, desc), cfg, rng)
print("leaves:", tree.n_leaves)

# %% query the training pixels with growing backtracking budgets
q = rng.choice(len(px), 500, replace=False)
for budget in (1, 2, 4, 8, tree.n_leaves):
    modes, dist = backtrack_tree(tree, stack, fidx[q], px[q], py[q], stack.depth[fidx[q], py[q], px[q]],
                                 desc[q], budget)
    err = np.linalg.norm(tree.mode_mean[modes] - labels[q], axis=1)
    print(f"budget {budget:2d}: mean descriptor distance {dist.mean():8.1f}, "
          f"median label error {np.median(err):.3f} m")
