from __future__ import annotations

import numpy as np
import pytest
from PIL import Image

from plreloc.data_io import (RgbdFrame, SyntheticWorld, decode_7scenes_depth, decode_tum_depth,
                             load_7scenes_sequence, load_tum_sequence, make_room_world,
                             make_trajectory, read_pose_file, render_frame, resample_rgb_to_depth,
                             write_7scenes_sequence)
from plreloc.errors import EmptyViewError, FormatError, ParseError, PoseValidationError
from plreloc.geometry import CameraIntrinsics, RigidTransform, back_project_many


def _write_tum(d, stamps_rgb, stamps_depth, stamps_gt, raw_depth=2000):
    (d / "rgb").mkdir(parents=True)
    (d / "depth").mkdir()
    rgb_lines, depth_lines, gt_lines = ["# rgb"], ["# depth"], ["# gt"]
    for t in stamps_rgb:
        Image.fromarray(np.full((6, 8, 3), 100, np.uint8)).save(d / "rgb" / f"{t:.6f}.png")
        rgb_lines.append(f"{t:.6f} rgb/{t:.6f}.png")
    for t in stamps_depth:
        raw = np.full((6, 8), raw_depth, np.uint16)
        raw[0, 0] = 0
        Image.fromarray(raw).save(d / "depth" / f"{t:.6f}.png")
        depth_lines.append(f"{t:.6f} depth/{t:.6f}.png")
    for t in stamps_gt:
        gt_lines.append(f"{t:.6f} 1 2 3 0 0 0 1")
    (d / "rgb.txt").write_text("\n".join(rgb_lines) + "\n")
    (d / "depth.txt").write_text("\n".join(depth_lines) + "\n")
    (d / "groundtruth.txt").write_text("\n".join(gt_lines) + "\n")


class TestDepthDecoding:
    def test_tum_scale_and_invalid(self):
        d = decode_tum_depth(np.array([[0, 5000, 10000]], np.uint16))
        assert np.isnan(d[0, 0])
        np.testing.assert_allclose(d[0, 1:], [1.0, 2.0])

    def test_7scenes_invalid_sentinel(self):
        d = decode_7scenes_depth(np.array([[65535, 0, 1500]], np.uint16))
        assert np.isnan(d[0, :2]).all()
        assert d[0, 2] == pytest.approx(1.5)


class TestTumLoader:
    def test_association_and_skips(self, tmp_path):
        _write_tum(tmp_path, [1.0, 2.0, 3.0], [1.005, 2.01, 3.5], [1.0, 2.0, 3.0])
        seq = load_tum_sequence(tmp_path, max_gap=0.02,
                                intrinsics=CameraIntrinsics(5, 5, 4, 3, 8, 6))
        assert len(seq) == 2
        assert seq.skipped == 1
        f = seq[0]
        assert np.isnan(f.depth[0, 0])
        assert f.depth[1, 1] == pytest.approx(0.4)
        np.testing.assert_allclose(f.pose.translation, [1, 2, 3])

    def test_missing_index(self, tmp_path):
        with pytest.raises(FormatError):
            load_tum_sequence(tmp_path)

    def test_bad_line_names_line_number(self, tmp_path):
        _write_tum(tmp_path, [1.0], [1.0], [1.0])
        (tmp_path / "rgb.txt").write_text("# c\nabc rgb/x.png\n")
        with pytest.raises(ParseError) as e:
            load_tum_sequence(tmp_path)
        assert e.value.lineno == 2


class TestSevenScenes:
    def test_round_trip(self, tmp_path, room_frames):
        write_7scenes_sequence(tmp_path, room_frames[:2])
        K = room_frames[0].intrinsics
        back = load_7scenes_sequence(tmp_path, intrinsics=K)
        assert len(back) == 2
        for a, b in zip(room_frames, back):
            np.testing.assert_array_equal(a.rgb, b.rgb)
            np.testing.assert_allclose(b.depth, a.depth, atol=5e-4)
            assert b.pose.allclose(a.pose, atol=1e-12)

    def test_mismatched_triplets(self, tmp_path, room_frames):
        write_7scenes_sequence(tmp_path, room_frames[:2])
        (tmp_path / "frame-000001.pose.txt").unlink()
        with pytest.raises(FormatError):
            load_7scenes_sequence(tmp_path)

    def test_non_rigid_pose(self, tmp_path):
        p = tmp_path / "frame-000000.pose.txt"
        p.write_text("2 0 0 0\n0 1 0 0\n0 0 1 0\n0 0 0 1\n")
        with pytest.raises(PoseValidationError):
            read_pose_file(p)


class TestFrame:
    def test_out_of_range_depth_is_invalid(self, small_K):
        depth = np.full((60, 80), 1.0)
        depth[0, 0], depth[0, 1], depth[0, 2] = 0.0, -1.0, 25.0
        f = RgbdFrame(np.zeros((60, 80, 3)), depth, small_K)
        assert not f.valid[0, :3].any() and f.valid[0, 3]

    def test_resample_rgb(self, small_K):
        f = RgbdFrame(np.zeros((120, 160, 3)), np.ones((60, 80)), small_K)
        assert not f.aligned
        with pytest.raises(FormatError):
            f.require_aligned()
        assert resample_rgb_to_depth(f).rgb.shape == (60, 80, 3)


class TestRenderer:
    def test_wall_center_depth(self, wall_frame):
        assert wall_frame.valid.all()
        assert wall_frame.depth[30, 40] == pytest.approx(2.0, abs=1e-9)

    def test_depth_consistency(self, room_frames):
        world = make_room_world(0, textured=True, cell=0.4)
        for f in room_frames[:3]:
            ys, xs = np.nonzero(f.valid)
            cam = back_project_many(xs, ys, f.depth[ys, xs], f.intrinsics)
            assert world.distance_to_surface(f.pose.apply(cam)).max() <= 1e-6

    def test_empty_view(self, small_K):
        with pytest.raises(EmptyViewError):
            render_frame(SyntheticWorld([], []), RigidTransform.identity(), small_K)

    def test_world_json_round_trip(self, tmp_path):
        w = make_room_world(3)
        w.save(tmp_path / "w.json")
        assert SyntheticWorld.load(tmp_path / "w.json").to_dict() == w.to_dict()

    def test_deterministic(self, small_K):
        w = make_room_world(1)
        pose = make_trajectory(4)[1]
        a, b = render_frame(w, pose, small_K), render_frame(w, pose, small_K)
        np.testing.assert_array_equal(a.rgb, b.rgb)
        np.testing.assert_array_equal(a.depth, b.depth)

    def test_untextured_walls_are_flat(self, small_K):
        w = make_room_world(0, textured=False, n_edges=0, n_boxes=1)
        f = render_frame(w, make_trajectory(8)[0], small_K)
        # without texture or bands, colours come from a handful of flat surfaces
        assert len(np.unique(f.rgb.reshape(-1, 3), axis=0)) <= 8
