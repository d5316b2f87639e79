from __future__ import annotations

import json

import pytest

from plreloc.config import RunConfig, SynthConfig, reduced_config
from plreloc.errors import ConfigValidationError


class TestRunConfig:
    def test_defaults(self):
        cfg = RunConfig()
        assert cfg.point_forest.max_depth == 25
        assert cfg.point_forest.backtrack_leaves == 8
        assert cfg.point_forest.n_trees == cfg.line_forest.n_trees == 5
        assert (cfg.point_forest.images_per_tree, cfg.point_forest.pixels_per_image) == (500, 5000)

    def test_json_round_trip(self, tmp_path):
        cfg = reduced_config(seed=7, synth=SynthConfig(n_train=3, n_test=2, textured=False))
        cfg.save(tmp_path / "c.json")
        back = RunConfig.load(tmp_path / "c.json")
        assert back.to_dict() == cfg.to_dict()
        assert back.to_json() == cfg.to_json()

    def test_partial_document_uses_defaults(self):
        cfg = RunConfig.from_dict({"seed": 3, "ransac": {"n_hypotheses": 64}})
        assert cfg.seed == 3 and cfg.ransac.n_hypotheses == 64
        assert cfg.ransac.batch_size == RunConfig().ransac.batch_size

    def test_unknown_key(self):
        with pytest.raises(ConfigValidationError, match="bogus"):
            RunConfig.from_dict({"point_forest": {"bogus": 1}})

    @pytest.mark.parametrize("doc", [
        {"synth": {"n_train": 0}},
        {"point_forest": {"max_depth": 0}},
        {"ransac": {"truncation": -1}},
        {"dataset": {"kind": "kitti"}},
        {"query": {"point_outlier_fraction": 1.5}},
        {"threads": 0},
        {"synth": 3},
    ])
    def test_invalid(self, doc):
        with pytest.raises(ConfigValidationError):
            RunConfig.from_dict(doc)

    def test_malformed_json(self, tmp_path):
        p = tmp_path / "c.json"
        p.write_text("{not json")
        with pytest.raises(ConfigValidationError):
            RunConfig.load(p)

    def test_document_is_plain_json(self):
        d = json.loads(RunConfig().to_json())
        assert set(d) >= {"dataset", "synth", "point_forest", "line_forest", "ransac", "query", "seed"}
