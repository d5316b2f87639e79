from __future__ import annotations

import json

import numpy as np
import pytest
from PIL import Image

from plreloc import pipeline
from plreloc.cli import EXIT_INPUT, EXIT_OK, main

_FOREST = {"n_trees": 1, "images_per_tree": 4, "pixels_per_image": 200, "max_depth": 6,
           "min_node_size": 20, "n_candidates": 20, "min_mode_weight": 3, "max_split_samples": 1000}
TINY = {"synth": {"n_train": 4, "n_test": 2, "width": 80, "height": 60, "focal": 65.6},
        "point_forest": _FOREST, "line_forest": _FOREST, "segments": {"min_length": 10.0},
        "ransac": {"n_hypotheses": 32, "batch_size": 100, "draws_per_hypothesis": 64},
        "query": {"n_point_pixels": 200, "n_line_samples": 200}}


@pytest.fixture(scope="module")
def run_dir(tmp_path_factory):
    """Synthesize, train and relocalize once through the CLI."""
    d = tmp_path_factory.mktemp("cli")
    (d / "cfg.json").write_text(json.dumps(TINY))
    assert main(["synth", "--config", str(d / "cfg.json"), "--out", str(d / "data")]) == EXIT_OK
    cfg = str(d / "data" / "config.json")
    assert main(["train", "--config", cfg, "--out", str(d / "models")]) == EXIT_OK
    assert main(["relocalize", "--config", cfg, "--models", str(d / "models"),
                 "--out", str(d / "res")]) == EXIT_OK
    return d


class TestPipelineCommands:
    def test_synth_layout(self, run_dir):
        test = run_dir / "data" / "test"
        assert len(list((run_dir / "data" / "train").glob("*.pose.txt"))) == 4
        assert len(list(test.glob("*.color.png"))) == 2
        assert (test / "groundtruth.txt").exists()

    def test_synth_deterministic(self, run_dir, tmp_path):
        assert main(["synth", "--config", str(run_dir / "cfg.json"), "--out", str(tmp_path)]) == 0
        for f in sorted((run_dir / "data" / "train").iterdir()):
            assert (tmp_path / "train" / f.name).read_bytes() == f.read_bytes()

    def test_train_outputs(self, run_dir):
        m = run_dir / "models"
        assert (m / pipeline.POINT_FOREST_FILE).exists()
        report = json.loads((m / "train_report.json").read_text())
        for r in report:
            assert all(t["leaves"] > 0 and t["depth"] <= 6 for t in r["forest"]["trees"])

    def test_retrain_byte_identical(self, run_dir, tmp_path):
        cfg = str(run_dir / "data" / "config.json")
        assert main(["train", "--config", cfg, "--out", str(tmp_path)]) == EXIT_OK
        for name in (pipeline.POINT_FOREST_FILE, pipeline.LINE_FOREST_FILE):
            assert (tmp_path / name).read_bytes() == (run_dir / "models" / name).read_bytes()

    def test_relocalize_outputs(self, run_dir, tmp_path):
        res = run_dir / "res"
        log = [json.loads(s) for s in (res / "frames.jsonl").read_text().splitlines()]
        assert len(log) == 2
        n_ok = sum(not r["failed"] for r in log)
        assert len((res / "trajectory.txt").read_text().splitlines()) == n_ok
        # a second run with the same seed writes the same trajectory
        cfg = str(run_dir / "data" / "config.json")
        assert main(["relocalize", "--config", cfg, "--models", str(run_dir / "models"),
                     "--out", str(tmp_path)]) == EXIT_OK
        assert (tmp_path / "trajectory.txt").read_text() == (res / "trajectory.txt").read_text()

    def test_evaluate_identity(self, run_dir, tmp_path, capsys):
        gt = str(run_dir / "data" / "test" / "groundtruth.txt")
        assert main(["evaluate", gt, gt, "--out", str(tmp_path / "r.txt")]) == EXIT_OK
        text = (tmp_path / "r.txt").read_text()
        assert "correct_percent: 100.00" in text
        assert "correct_percent: 100.00" in capsys.readouterr().out

    def test_evaluate_estimate(self, run_dir):
        assert main(["evaluate", str(run_dir / "res" / "trajectory.txt"),
                     str(run_dir / "data" / "test" / "groundtruth.txt")]) == EXIT_OK


class TestErrors:
    def test_missing_models(self, run_dir, tmp_path):
        cfg = str(run_dir / "data" / "config.json")
        assert main(["relocalize", "--config", cfg, "--models", str(tmp_path / "none"),
                     "--out", str(tmp_path)]) == EXIT_INPUT

    def test_bad_config(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text(json.dumps({"synth": {"n_train": 0}}))
        assert main(["synth", "--config", str(p), "--out", str(tmp_path)]) == EXIT_INPUT

    def test_missing_training_data(self, tmp_path):
        assert main(["train", "--data", str(tmp_path / "none"), "--out", str(tmp_path)]) == EXIT_INPUT

    def test_malformed_trajectory(self, tmp_path, capsys):
        p = tmp_path / "t.txt"
        p.write_text("0 0 0 0 0 0 0 1\n1 0 0\n")
        assert main(["evaluate", str(p), str(p)]) == EXIT_INPUT
        assert ":2:" in capsys.readouterr().err


class TestDetectLines:
    def test_square(self, tmp_path):
        img = np.zeros((100, 100, 3), np.uint8)
        img[30:70, 30:70] = 200
        Image.fromarray(img).save(tmp_path / "sq.png")
        out = tmp_path / "segs.txt"
        assert main(["detect-lines", str(tmp_path / "sq.png"), "--out", str(out)]) == EXIT_OK
        rows = [s for s in out.read_text().splitlines() if s and not s.startswith("#")]
        assert len(rows) >= 4
