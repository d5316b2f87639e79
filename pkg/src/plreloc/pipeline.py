"""End-to-end orchestration: synthesize, train, relocalize, evaluate."""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .config import RunConfig
from .data_io import (load_7scenes_sequence, load_tum_sequence, make_room_world, make_trajectory,
                      render_sequence, write_7scenes_sequence)
from .errors import EmptySampleError, RelocError, TrainingInputError
from .evaluation import write_trajectory
from .features import ImageStack, wht_descriptors
from .forest import Forest, ForestConfig, TrainingData, train_tree
from .geometry import pose_delta
from .lines import detect_segments
from .pose import QueryConfig, RansacConfig, frame_constraints, ransac_from_constraints
from .sampling import GENERAL, LINE, SampleSet, make_general_samples, make_line_samples

log = logging.getLogger(__name__)

POINT_FOREST_FILE = "points.plf"
LINE_FOREST_FILE = "lines.plf"


# -------------------------------------------------------------- synthesis

def synth_poses(cfg: RunConfig):
    s = cfg.synth
    train = make_trajectory(s.n_train)
    # test poses sit test_phase training steps along the same loop, jittered
    phase = s.test_phase * s.n_test / s.n_train
    test = make_trajectory(s.n_test, phase=phase, jitter=s.test_jitter, seed=s.world_seed + 1)
    return train, test


def synthesize(cfg: RunConfig, out_dir=None):
    """Render train/test frames of a synthetic room; write them when ``out_dir`` is given."""
    s = cfg.synth
    world = make_room_world(s.world_seed, s.textured, n_boxes=s.n_boxes, n_edges=s.n_edges,
                            cell=s.texture_cell)
    K = s.intrinsics()
    train_poses, test_poses = synth_poses(cfg)
    train = render_sequence(world, train_poses, K, "train")
    test = render_sequence(world, test_poses, K, "test")
    if out_dir is not None:
        out = Path(out_dir)
        write_7scenes_sequence(out / "train", train)
        write_7scenes_sequence(out / "test", test)
        world.save(out / "world.json")
        (out / "intrinsics.json").write_text(json.dumps(K.to_dict(), indent=1))
        write_trajectory(out / "test" / "groundtruth.txt",
                         [(float(i), f.pose) for i, f in enumerate(test)])
    return world, train, test


def load_sequence(cfg: RunConfig, which: str):
    path = getattr(cfg.dataset, which)
    K = cfg.camera()
    if cfg.dataset.kind == "tum":
        return list(load_tum_sequence(path, intrinsics=K))
    return list(load_7scenes_sequence(path, intrinsics=K))


# ---------------------------------------------------------------- training

@dataclass
class TrainReport:
    kind: str
    n_samples: list
    seconds: float
    forest: dict

    def to_dict(self) -> dict:
        return asdict(self)


def _tree_seeds(seed: int, kind: str, n: int):
    salt = 0 if kind == GENERAL else 1
    return np.random.SeedSequence([seed, salt]).spawn(n)


def gather_samples(frames, stack: ImageStack, kind: str, fc: ForestConfig, cfg: RunConfig,
                   rng, segments=None) -> SampleSet:
    """Samples for one tree from ``images_per_tree`` frames drawn with replacement."""
    picks = np.sort(rng.integers(0, len(frames), size=fc.images_per_tree))
    sets = []
    for i in picks:
        f = frames[i]
        try:
            if kind == GENERAL:
                s = make_general_samples(f, fc.pixels_per_image, rng)
            else:
                params = cfg.line_sampling
                params = type(params)(**{**asdict(params), "max_samples": min(params.max_samples,
                                                                             fc.pixels_per_image)})
                s, _ = make_line_samples(f, segments[i], params, rng)
        except EmptySampleError:
            continue
        s.fidx = np.full(len(s), i, dtype=np.int64)
        sets.append(s)
    return SampleSet.concatenate(sets, kind)


def train_forest(frames, kind: str, fc: ForestConfig, cfg: RunConfig, stack=None,
                 segments=None) -> tuple[Forest, TrainReport]:
    """Train one forest of ``kind`` on posed frames."""
    if not frames:
        raise TrainingInputError("no training frames")
    if any(f.pose is None for f in frames):
        raise TrainingInputError("every training frame needs a ground-truth pose")
    t0 = time.perf_counter()
    stack = stack or ImageStack.from_frames(frames)
    if kind == LINE and segments is None:
        segments = [detect_segments(f.gray, cfg.segments) for f in frames]

    def one(ss):
        rng = np.random.default_rng(ss)
        S = gather_samples(frames, stack, kind, fc, cfg, rng, segments)
        if len(S) == 0:
            raise TrainingInputError(f"no {kind} samples could be drawn")
        desc = wht_descriptors(stack, S.fidx, S.px, S.py)
        tree = train_tree(TrainingData(stack, S.fidx, S.px, S.py, S.labels, desc), fc, rng)
        return tree, len(S)

    seeds = _tree_seeds(cfg.seed, kind, fc.n_trees)
    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            out = list(ex.map(one, seeds))
    else:
        out = [one(s) for s in seeds]
    forest = Forest([t for t, _ in out], kind, fc)
    report = TrainReport(kind, [n for _, n in out], time.perf_counter() - t0, forest.report())
    return forest, report


def train_forests(frames, cfg: RunConfig):
    stack = ImageStack.from_frames(frames)
    pf, pr = train_forest(frames, GENERAL, cfg.point_forest, cfg, stack)
    if not cfg.use_lines:
        return pf, None, [pr]
    lf, lr = train_forest(frames, LINE, cfg.line_forest, cfg, stack)
    return pf, lf, [pr, lr]


def save_forests(out_dir, point_forest: Forest, line_forest: Forest | None, reports) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    point_forest.save(out / POINT_FOREST_FILE)
    if line_forest is not None:
        line_forest.save(out / LINE_FOREST_FILE)
    (out / "train_report.json").write_text(json.dumps([r.to_dict() for r in reports], indent=1))


def load_forests(model_dir):
    d = Path(model_dir)
    pf = Forest.load(d / POINT_FOREST_FILE)
    lf = Forest.load(d / LINE_FOREST_FILE) if (d / LINE_FOREST_FILE).exists() else None
    return pf, lf


# ------------------------------------------------------------ relocalization

@dataclass
class FrameResult:
    index: int
    name: str
    timestamp: float
    pose: object = None
    energy: float = float("nan")
    n_points: int = 0
    n_lines: int = 0
    inlier_points: int = 0
    inlier_lines: int = 0
    failed: bool = False
    message: str = ""
    seconds: float = 0.0

    def log_record(self) -> dict:
        d = asdict(self)
        d["pose"] = None if self.pose is None else self.pose.as_matrix().tolist()
        return d


def relocalize_frame(frame, index: int, point_forest, line_forest, ransac: RansacConfig,
                     query: QueryConfig, seed: int) -> FrameResult:
    rng = np.random.default_rng(np.random.SeedSequence([seed, 2, index]))
    t0 = time.perf_counter()
    res = FrameResult(index, frame.name, frame.timestamp)
    try:
        P, L = frame_constraints(frame, point_forest, line_forest, query, rng)
        out = ransac_from_constraints(P, L, ransac, rng)
        res.pose, res.energy = out.pose, out.energy
        res.n_points, res.n_lines = out.n_points, out.n_lines
        res.inlier_points, res.inlier_lines = out.inlier_points, out.inlier_lines
        res.message = out.warning or ""
    except (RelocError, ValueError) as e:
        res.failed, res.message = True, f"{type(e).__name__}: {e}"
    res.seconds = time.perf_counter() - t0
    return res


def relocalize(frames, point_forest, line_forest, cfg: RunConfig) -> list[FrameResult]:
    """Relocalize each frame independently; failures are recorded, not raised."""
    lf = line_forest if cfg.use_lines else None

    def one(i):
        return relocalize_frame(frames[i], i, point_forest, lf, cfg.ransac, cfg.query, cfg.seed)

    if cfg.threads > 1:
        with ThreadPoolExecutor(cfg.threads) as ex:
            return list(ex.map(one, range(len(frames))))
    return [one(i) for i in range(len(frames))]


def write_results(out_dir, results) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_trajectory(out / "trajectory.txt",
                     [(r.timestamp, r.pose) for r in results if not r.failed])
    with open(out / "frames.jsonl", "w") as fh:
        for r in results:
            fh.write(json.dumps(r.log_record()) + "\n")


def frame_errors(results, frames):
    """(meters, degrees) per frame; failed frames get infinite error."""
    out = []
    for r, f in zip(results, frames):
        out.append((np.inf, np.inf) if r.failed or r.pose is None else pose_delta(r.pose, f.pose))
    return out


def run_synthetic(cfg: RunConfig):
    """Synthesize, train and relocalize in memory; returns (results, test frames, reports)."""
    _, train, test = synthesize(cfg)
    pf, lf, reports = train_forests(train, cfg)
    return relocalize(test, pf, lf, cfg), test, reports
