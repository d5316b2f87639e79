#!/usr/bin/env python3
"""Full pipeline on a small synthetic room: render, train both forests, relocalize.

This uses a scaled-down configuration so that it finishes in a couple of
minutes; the acceptance suite runs the 320x240, 100/50-frame version.
"""

from __future__ import annotations

import time

from plreloc.config import SynthConfig, reduced_config
from plreloc.evaluation import correct_frame_rate, median_errors
from plreloc.forest import ForestConfig
from plreloc.pipeline import frame_errors, run_synthetic

forest = ForestConfig(n_trees=2, images_per_tree=30, pixels_per_image=1000, max_depth=12,
                      n_candidates=100, max_split_samples=4000)
cfg = reduced_config(synth=SynthConfig(n_train=30, n_test=10, width=160, height=120, focal=131.25),
                     point_forest=forest, line_forest=forest)

t0 = time.perf_counter()
results, test, reports = run_synthetic(cfg)
for r in reports:
    print(f"{r.kind}: {sum(r.n_samples)} samples, "
          f"leaves {[t['leaves'] for t in r.forest['trees']]}, {r.seconds:.1f}s")

errs = frame_errors(results, test)
for r, (t, a) in zip(results, errs):
    print(f"frame {r.index:2d}: {100 * t:6.2f} cm {a:6.2f} deg  "
          f"points {r.inlier_points}/{r.n_points} lines {r.inlier_lines}/{r.n_lines}")
print(f"correct (5 cm, 5 deg): {100 * correct_frame_rate(errs):.0f}%, median {median_errors(errs)}, "
      f"{time.perf_counter() - t0:.0f}s total")
