"""Command-line interface.

    plreloc synth      --config cfg.json --out data/
    plreloc train      --config cfg.json --data data/train --out models/
    plreloc relocalize --config cfg.json --data data/test --models models/ --out results/
    plreloc evaluate   results/trajectory.txt data/test/groundtruth.txt [--out report.txt]
    plreloc detect-lines image.png --out segments.txt

Exit codes: 0 success, 1 input error, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
import time
from pathlib import Path

import numpy as np
from PIL import Image

from . import pipeline
from .config import RunConfig
from .data_io import ensure_dir
from .errors import (ConfigValidationError, EmptyInputError, FormatError, RelocError,
                     TrainingInputError)
from .evaluation import evaluate_trajectories, read_trajectory
from .lines import detect_segments, write_segments_file

log = logging.getLogger("plreloc")

EXIT_OK, EXIT_INPUT, EXIT_RUNTIME = 0, 1, 2
_INPUT_ERRORS = (ConfigValidationError, EmptyInputError, FormatError, TrainingInputError,
                 FileNotFoundError, NotADirectoryError, PermissionError, IsADirectoryError)


def load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    changes = {}
    if args.seed is not None:
        changes["seed"] = args.seed
    if args.threads is not None:
        changes["threads"] = args.threads
    if getattr(args, "out", None):
        changes["output"] = args.out
    data = getattr(args, "data", None)
    if data:
        which = "test" if args.command == "relocalize" else "train"
        changes["dataset"] = dataclasses.replace(cfg.dataset, **{which: data})
    return cfg.replace(**changes) if changes else cfg


def cmd_synth(args) -> int:
    cfg = load_config(args)
    out = ensure_dir(cfg.output)
    pipeline.synthesize(cfg, out)
    cfg.replace(dataset=dataclasses.replace(cfg.dataset, train=str(out / "train"),
                                            test=str(out / "test"))).save(out / "config.json")
    print(f"wrote {cfg.synth.n_train} train and {cfg.synth.n_test} test frames to {out}")
    return EXIT_OK


def cmd_train(args) -> int:
    cfg = load_config(args)
    frames = pipeline.load_sequence(cfg, "train")
    if not frames:
        raise TrainingInputError(f"no frames in {cfg.dataset.train}")
    t0 = time.perf_counter()
    pf, lf, reports = pipeline.train_forests(frames, cfg)
    out = ensure_dir(cfg.output)
    pipeline.save_forests(out, pf, lf, reports)
    for r in reports:
        depths = [t["depth"] for t in r.forest["trees"]]
        leaves = [t["leaves"] for t in r.forest["trees"]]
        print(f"{r.kind}: {len(depths)} trees, samples {r.n_samples}, leaves {leaves}, "
              f"depths {depths}, {r.seconds:.1f}s")
    print(f"trained in {time.perf_counter() - t0:.1f}s; forests in {out}")
    return EXIT_OK


def cmd_relocalize(args) -> int:
    cfg = load_config(args)
    model_dir = Path(args.models)
    if not (model_dir / pipeline.POINT_FOREST_FILE).exists():
        raise FileNotFoundError(f"no forest files in {model_dir}")
    pf, lf = pipeline.load_forests(model_dir)
    frames = [f.without_pose() for f in pipeline.load_sequence(cfg, "test")]
    results = pipeline.relocalize(frames, pf, lf, cfg)
    out = ensure_dir(cfg.output)
    pipeline.write_results(out, results)
    failed = sum(r.failed for r in results)
    print(f"relocalized {len(results) - failed}/{len(results)} frames; results in {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    est = read_trajectory(args.estimate)
    gt = read_trajectory(args.groundtruth)
    report = evaluate_trajectories(est, gt, args.max_gap)
    text = report.to_text()
    print(text, end="")
    if args.out:
        Path(args.out).write_text(text)
    return EXIT_OK


def cmd_detect_lines(args) -> int:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    rgb = np.asarray(Image.open(args.image).convert("RGB"), dtype=np.float64)
    segs = detect_segments(rgb.mean(axis=2), cfg.segments)
    if args.out:
        write_segments_file(args.out, segs)
    else:
        for s in segs:
            print(f"{s.a[0]:.3f} {s.a[1]:.3f} {s.b[0]:.3f} {s.b[1]:.3f}")
    log.info("%d segments", len(segs))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="plreloc", description=__doc__.split("\n")[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, data=False):
        sp.add_argument("--config", help="JSON run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out", help="output directory")
        if data:
            sp.add_argument("--data", help="sequence directory (overrides the config)")

    common(sub.add_parser("synth", help="render a synthetic dataset"))
    common(sub.add_parser("train", help="train the point and line forests"), data=True)
    r = sub.add_parser("relocalize", help="relocalize every frame of a test sequence")
    common(r, data=True)
    r.add_argument("--models", required=True, help="directory holding the forest files")
    e = sub.add_parser("evaluate", help="compare an estimated trajectory with ground truth")
    e.add_argument("estimate")
    e.add_argument("groundtruth")
    e.add_argument("--out")
    e.add_argument("--max-gap", type=float, default=0.02)
    d = sub.add_parser("detect-lines", help="dump detected segments of an image")
    d.add_argument("image")
    d.add_argument("--out")
    d.add_argument("--config")
    return p


COMMANDS = {"synth": cmd_synth, "train": cmd_train, "relocalize": cmd_relocalize,
            "evaluate": cmd_evaluate, "detect-lines": cmd_detect_lines}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except _INPUT_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT
    except (RelocError, RuntimeError, ValueError, OSError) as e:
        print(f"failed: {type(e).__name__}: {e}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
