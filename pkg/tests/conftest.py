from __future__ import annotations

import numpy as np
import pytest

from plreloc.data_io import Patch, SyntheticWorld, look_at, make_room_world, render_frame
from plreloc.features import ImageStack, wht_descriptors
from plreloc.forest import ForestConfig, TrainingData, train_tree
from plreloc.geometry import CameraIntrinsics
from plreloc.sampling import make_general_samples


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture(scope="session")
def small_K():
    return CameraIntrinsics(100.0, 100.0, 40.0, 30.0, 80, 60)


@pytest.fixture(scope="session")
def wall_world():
    """One 4x4 m textured wall in the plane y = 2."""
    p = Patch([-2.0, 2.0, -2.0], [4.0, 0.0, 0.0], [0.0, 0.0, 4.0], (120.0, 90.0, 60.0), 0.9, 0.3, 1)
    return SyntheticWorld([p], [], ((-2.0, 2.0, -2.0), (2.0, 2.0, 2.0)))


@pytest.fixture(scope="session")
def wall_frame(wall_world, small_K):
    pose = look_at([0.0, 0.0, 0.0], [0.0, 1.0, 0.0])
    return render_frame(wall_world, pose, small_K, name="wall")


@pytest.fixture(scope="session")
def room_frames(small_K):
    world = make_room_world(0, textured=True, cell=0.4)
    poses = [look_at([0.3 * np.cos(a), 0.3 * np.sin(a), 1.4],
                     [2 * np.cos(a), 2 * np.sin(a), 1.3]) for a in np.linspace(0, 1.0, 6)]
    return [render_frame(world, p, small_K, float(i), f"f{i}") for i, p in enumerate(poses)]


@pytest.fixture(scope="session")
def small_tree(room_frames):
    """A shallow tree trained on a few small frames, plus its training data."""
    stack = ImageStack.from_frames(room_frames)
    rng = np.random.default_rng(3)
    sets = []
    for i, f in enumerate(room_frames):
        s = make_general_samples(f, 400, rng)
        s.fidx = np.full(len(s), i)
        sets.append(s)
    fidx = np.concatenate([s.fidx for s in sets])
    px = np.concatenate([s.px for s in sets])
    py = np.concatenate([s.py for s in sets])
    labels = np.concatenate([s.labels for s in sets])
    desc = wht_descriptors(stack, fidx, px, py)
    data = TrainingData(stack, fidx, px, py, labels, desc)
    cfg = ForestConfig(n_trees=1, max_depth=6, min_node_size=40, n_candidates=60,
                       min_mode_weight=5)
    return train_tree(data, cfg, rng), data, cfg


# ------------------------------------------------------- acceptance report

_CRITERIA: list[tuple[str, bool, str]] = []


@pytest.fixture
def criterion():
    """Record one acceptance criterion outcome; the summary prints one line per criterion."""

    def record(name: str, passed: bool, detail: str = "") -> bool:
        _CRITERIA.append((name, bool(passed), detail))
        print(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
        return bool(passed)

    return record


def pytest_terminal_summary(terminalreporter):
    if not _CRITERIA:
        return
    terminalreporter.section("acceptance criteria")
    for name, passed, detail in _CRITERIA:
        terminalreporter.write_line(f"{'PASS' if passed else 'FAIL'} {name}: {detail}")
