"""Run configuration: one JSON document holding every tunable of the pipeline."""

from __future__ import annotations

import dataclasses
import json
import typing
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .errors import ConfigValidationError
from .forest import ForestConfig
from .geometry import CameraIntrinsics
from .lines import SegmentParams
from .pose import LMConfig, QueryConfig, RansacConfig
from .sampling import LineSampleParams

DATASET_KINDS = ("synthetic", "7scenes", "tum")


@dataclass(frozen=True)
class SynthConfig:
    n_train: int = 100
    n_test: int = 50
    width: int = 320
    height: int = 240
    focal: float = 262.5
    textured: bool = True
    texture_cell: float = 0.4
    n_boxes: int = 4
    n_edges: int = 24
    world_seed: int = 0
    test_phase: float = 0.5
    test_jitter: float = 0.01

    def intrinsics(self) -> CameraIntrinsics:
        return CameraIntrinsics(self.focal, self.focal, self.width / 2, self.height / 2,
                                self.width, self.height)


@dataclass(frozen=True)
class DatasetConfig:
    kind: str = "synthetic"
    train: str = "data/train"
    test: str = "data/test"
    intrinsics: dict | None = None


@dataclass(frozen=True)
class RunConfig:
    dataset: DatasetConfig = field(default_factory=DatasetConfig)
    synth: SynthConfig = field(default_factory=SynthConfig)
    point_forest: ForestConfig = field(default_factory=ForestConfig)
    line_forest: ForestConfig = field(default_factory=ForestConfig)
    line_sampling: LineSampleParams = field(default_factory=LineSampleParams)
    segments: SegmentParams = field(default_factory=SegmentParams)
    ransac: RansacConfig = field(default_factory=RansacConfig)
    query: QueryConfig = field(default_factory=QueryConfig)
    use_lines: bool = True
    seed: int = 0
    threads: int = 1
    output: str = "out"

    def __post_init__(self):
        validate(self)

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_dict(cls, d: dict) -> RunConfig:
        return _build(cls, d, "config")

    def save(self, path) -> None:
        Path(path).write_text(self.to_json() + "\n")

    @classmethod
    def load(cls, path) -> RunConfig:
        try:
            d = json.loads(Path(path).read_text())
        except json.JSONDecodeError as e:
            raise ConfigValidationError(f"{path}: {e}") from None
        return cls.from_dict(d)

    def replace(self, **changes) -> RunConfig:
        return dataclasses.replace(self, **changes)

    def camera(self) -> CameraIntrinsics:
        if self.dataset.intrinsics:
            return CameraIntrinsics(**self.dataset.intrinsics)
        return self.synth.intrinsics()


def _build(cls, d, where: str):
    if not isinstance(d, dict):
        raise ConfigValidationError(f"{where}: expected an object, got {type(d).__name__}")
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(d) - names
    if unknown:
        raise ConfigValidationError(f"{where}: unknown keys {sorted(unknown)}")
    kwargs = {}
    for k, v in d.items():
        tp = hints[k]
        if dataclasses.is_dataclass(tp):
            v = _build(tp, v, f"{where}.{k}")
        kwargs[k] = v
    try:
        return cls(**kwargs)
    except ConfigValidationError:
        raise
    except (TypeError, ValueError) as e:
        raise ConfigValidationError(f"{where}: {e}") from None


def validate(cfg: RunConfig) -> None:
    s = cfg.synth
    for name in ("n_train", "n_test", "width", "height", "n_boxes"):
        if getattr(s, name) <= 0:
            raise ConfigValidationError(f"synth.{name} must be positive")
    if s.focal <= 0 or s.texture_cell <= 0 or s.n_edges < 0:
        raise ConfigValidationError("synth focal, texture_cell must be positive and n_edges >= 0")
    if cfg.dataset.kind not in DATASET_KINDS:
        raise ConfigValidationError(f"dataset.kind must be one of {DATASET_KINDS}")
    r = cfg.ransac
    if r.n_hypotheses <= 0 or r.batch_size <= 0 or r.truncation <= 0 or r.inlier_rounds <= 0:
        raise ConfigValidationError("ransac counts and truncation must be positive")
    if cfg.query.n_point_pixels <= 0 or cfg.query.n_line_samples <= 0:
        raise ConfigValidationError("query pixel counts must be positive")
    if not 0 <= cfg.query.point_outlier_fraction <= 1:
        raise ConfigValidationError("query.point_outlier_fraction must lie in [0, 1]")
    ls = cfg.line_sampling
    if ls.spacing <= 0 or ls.min_valid <= 0 or ls.max_samples <= 0:
        raise ConfigValidationError("line_sampling values must be positive")
    if cfg.threads <= 0:
        raise ConfigValidationError("threads must be positive")


def reduced_config(**changes) -> RunConfig:
    """Small settings used by the synthetic end-to-end runs and demos."""
    forest = ForestConfig(n_trees=2, images_per_tree=100, pixels_per_image=2000, max_depth=16,
                          n_candidates=200, max_split_samples=8000)
    base = RunConfig(point_forest=forest, line_forest=forest)
    return dataclasses.replace(base, **changes)


__all__ = ["DatasetConfig", "LMConfig", "RunConfig", "SynthConfig", "reduced_config", "validate"]
