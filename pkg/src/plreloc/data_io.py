"""RGB-D sequence loaders (TUM, 7-Scenes/4-Scenes layouts) and a synthetic renderer.

Depth images are float32 meters with NaN marking invalid pixels.
"""

from __future__ import annotations

import json
import logging
import math
import os
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import EmptyViewError, FormatError, ParseError, PoseValidationError
from .geometry import CameraIntrinsics, RigidTransform

log = logging.getLogger(__name__)

MAX_DEPTH = 20.0
TUM_DEPTH_SCALE = 5000.0
SEVEN_SCENES_INVALID = 65535

TUM_INTRINSICS = CameraIntrinsics(525.0, 525.0, 319.5, 239.5, 640, 480)
SEVEN_SCENES_INTRINSICS = CameraIntrinsics(585.0, 585.0, 320.0, 240.0, 640, 480)


@dataclass(frozen=True, eq=False)
class RgbdFrame:
    rgb: np.ndarray
    depth: np.ndarray
    intrinsics: CameraIntrinsics
    pose: RigidTransform | None = None
    timestamp: float = 0.0
    name: str = ""

    def __post_init__(self):
        rgb = np.ascontiguousarray(self.rgb, dtype=np.uint8)
        depth = np.array(self.depth, dtype=np.float32)
        if rgb.ndim != 3 or rgb.shape[2] != 3:
            raise FormatError(f"rgb must be HxWx3, got {rgb.shape}")
        with np.errstate(invalid="ignore"):
            depth[~((depth > 0) & (depth <= MAX_DEPTH))] = np.nan
        rgb.setflags(write=False)
        depth.setflags(write=False)
        object.__setattr__(self, "rgb", rgb)
        object.__setattr__(self, "depth", depth)

    @property
    def shape(self) -> tuple[int, int]:
        return self.depth.shape

    @property
    def aligned(self) -> bool:
        return self.rgb.shape[:2] == self.depth.shape

    def require_aligned(self) -> None:
        if not self.aligned:
            raise FormatError(f"rgb {self.rgb.shape[:2]} and depth {self.depth.shape} differ; "
                              "call resample_rgb_to_depth first")

    @property
    def valid(self) -> np.ndarray:
        return np.isfinite(self.depth)

    @property
    def gray(self) -> np.ndarray:
        return self.rgb.astype(np.float64).mean(axis=2)

    def without_pose(self) -> RgbdFrame:
        return RgbdFrame(self.rgb, self.depth, self.intrinsics, None, self.timestamp, self.name)


class LoadedSequence(list):
    """A list of frames that also remembers how many source frames were skipped."""

    def __init__(self, frames=(), skipped: int = 0):
        super().__init__(frames)
        self.skipped = skipped


# --------------------------------------------------------------------------- TUM

def _read_index(path: Path) -> list[tuple[float, list[str]]]:
    if not path.is_file():
        raise FormatError(f"missing index file {path}")
    rows = []
    for lineno, line in enumerate(path.read_text().splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        parts = line.replace(",", " ").split()
        try:
            rows.append((float(parts[0]), parts[1:]))
        except (ValueError, IndexError):
            raise ParseError(path, lineno, f"cannot parse {line!r}") from None
    return rows


def _nearest(stamps: np.ndarray, t: float) -> int:
    i = int(np.searchsorted(stamps, t))
    cands = [j for j in (i - 1, i) if 0 <= j < len(stamps)]
    return min(cands, key=lambda j: abs(stamps[j] - t))


def decode_tum_depth(raw) -> np.ndarray:
    raw = np.asarray(raw)
    depth = raw.astype(np.float32) / np.float32(TUM_DEPTH_SCALE)
    depth[raw == 0] = np.nan
    return depth


def decode_7scenes_depth(raw) -> np.ndarray:
    raw = np.asarray(raw)
    depth = raw.astype(np.float32) / np.float32(1000.0)
    depth[(raw == SEVEN_SCENES_INVALID) | (raw == 0)] = np.nan
    return depth


def _load_png(path: Path) -> np.ndarray:
    with Image.open(path) as im:
        if im.mode in ("RGB", "RGBA", "P", "L"):
            return np.asarray(im.convert("RGB"))
        return np.asarray(im).astype(np.uint16)


def load_tum_sequence(directory, max_gap: float = 0.02,
                      intrinsics: CameraIntrinsics = TUM_INTRINSICS) -> LoadedSequence:
    """Load a TUM RGB-D sequence, associating rgb/depth/groundtruth by nearest timestamp.

    RGB frames without a depth image or pose within ``max_gap`` seconds are
    skipped; the count is kept in ``result.skipped``.
    """
    d = Path(directory)
    rgb_idx = _read_index(d / "rgb.txt")
    depth_idx = _read_index(d / "depth.txt")
    gt_idx = _read_index(d / "groundtruth.txt")
    depth_t = np.array([t for t, _ in depth_idx])
    gt_t = np.array([t for t, _ in gt_idx])
    frames, skipped = [], 0
    for t, (rgb_name, *_) in rgb_idx:
        if len(depth_t) == 0 or len(gt_t) == 0:
            skipped += 1
            continue
        j = _nearest(depth_t, t)
        k = _nearest(gt_t, t)
        if abs(depth_t[j] - t) > max_gap or abs(gt_t[k] - t) > max_gap:
            skipped += 1
            continue
        vals = gt_idx[k][1]
        if len(vals) != 7:
            raise FormatError(f"groundtruth line at t={gt_t[k]} needs 7 values")
        tx, ty, tz, qx, qy, qz, qw = map(float, vals)
        pose = RigidTransform.from_quaternion([qx, qy, qz, qw], [tx, ty, tz])
        rgb = _load_png(d / rgb_name)
        depth = decode_tum_depth(_load_png(d / depth_idx[j][1][0]))
        frame = RgbdFrame(rgb if rgb.shape[:2] == depth.shape else
                          _resize_rgb(rgb, depth.shape), depth, intrinsics, pose, t, rgb_name)
        frames.append(frame)
    if skipped:
        log.info("skipped %d unassociated frames in %s", skipped, d)
    return LoadedSequence(frames, skipped)


# --------------------------------------------------------------------- 7-Scenes

def read_pose_file(path) -> RigidTransform:
    path = Path(path)
    try:
        m = np.array([float(v) for v in path.read_text().split()])
    except ValueError:
        raise FormatError(f"{path}: non-numeric pose entries") from None
    if m.size != 16:
        raise FormatError(f"{path}: expected 16 values, got {m.size}")
    try:
        return RigidTransform.from_matrix(m.reshape(4, 4))
    except PoseValidationError as e:
        raise PoseValidationError(f"{path}: {e}") from None


def load_7scenes_sequence(directory,
                          intrinsics: CameraIntrinsics = SEVEN_SCENES_INTRINSICS) -> LoadedSequence:
    d = Path(directory)
    colors = sorted(d.glob("frame-*.color.png"))
    depths = sorted(d.glob("frame-*.depth.png"))
    poses = sorted(d.glob("frame-*.pose.txt"))
    if not (len(colors) == len(depths) == len(poses)):
        raise FormatError(f"{d}: mismatched triplets ({len(colors)} color, "
                          f"{len(depths)} depth, {len(poses)} pose)")
    frames = []
    for i, (c, dp, p) in enumerate(zip(colors, depths, poses)):
        stem = c.name[: -len(".color.png")]
        if dp.name[: -len(".depth.png")] != stem or p.name[: -len(".pose.txt")] != stem:
            raise FormatError(f"{d}: triplet names disagree at {stem}")
        rgb = _load_png(c)
        depth = decode_7scenes_depth(_load_png(dp))
        if rgb.shape[:2] != depth.shape:
            rgb = _resize_rgb(rgb, depth.shape)
        frames.append(RgbdFrame(rgb, depth, intrinsics, read_pose_file(p), float(i), stem))
    return LoadedSequence(frames)


def write_7scenes_sequence(directory, frames) -> None:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for i, f in enumerate(frames):
        stem = d / f"frame-{i:06d}"
        Image.fromarray(f.rgb).save(f"{stem}.color.png")
        raw = np.where(np.isfinite(f.depth), np.round(np.nan_to_num(f.depth) * 1000.0),
                       SEVEN_SCENES_INVALID)
        raw = np.clip(raw, 0, SEVEN_SCENES_INVALID).astype(np.uint16)
        Image.fromarray(raw).save(f"{stem}.depth.png")
        m = (f.pose or RigidTransform.identity()).as_matrix()
        Path(f"{stem}.pose.txt").write_text(
            "\n".join(" ".join(f"{v:.17g}" for v in row) for row in m) + "\n")


def _resize_rgb(rgb: np.ndarray, shape: tuple[int, int]) -> np.ndarray:
    h, w = shape
    return np.asarray(Image.fromarray(rgb).resize((w, h), Image.BILINEAR))


def resample_rgb_to_depth(frame: RgbdFrame) -> RgbdFrame:
    """Bilinearly resample the colour image to the depth resolution."""
    if frame.rgb.shape[:2] == frame.depth.shape:
        return frame
    return RgbdFrame(_resize_rgb(frame.rgb, frame.depth.shape), frame.depth,
                     frame.intrinsics, frame.pose, frame.timestamp, frame.name)


# ------------------------------------------------------------------- synthetic

@dataclass(frozen=True, eq=False)
class Patch:
    """Rectangle ``origin + s*u + t*v`` for s, t in [0, 1] with a procedural texture."""

    origin: np.ndarray
    u: np.ndarray
    v: np.ndarray
    color: tuple[float, float, float]
    contrast: float = 0.0
    cell: float = 0.12
    seed: int = 0

    def __post_init__(self):
        for name in ("origin", "u", "v"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=np.float64))
        if np.linalg.norm(np.cross(self.u, self.v)) <= 1e-9:
            raise ValueError("degenerate patch")

    @property
    def normal(self) -> np.ndarray:
        n = np.cross(self.u, self.v)
        return n / np.linalg.norm(n)

    def to_dict(self) -> dict:
        return {"origin": self.origin.tolist(), "u": self.u.tolist(), "v": self.v.tolist(),
                "color": list(self.color), "contrast": self.contrast, "cell": self.cell,
                "seed": self.seed}


@dataclass(frozen=True, eq=False)
class Edge:
    """A straight colour band of ``width`` meters painted on patch ``patch``."""

    a: np.ndarray
    b: np.ndarray
    patch: int
    color: tuple[float, float, float]
    width: float = 0.04

    def __post_init__(self):
        object.__setattr__(self, "a", np.asarray(self.a, dtype=np.float64))
        object.__setattr__(self, "b", np.asarray(self.b, dtype=np.float64))
        if np.linalg.norm(self.b - self.a) <= 0.2:
            raise ValueError("edge shorter than 0.2 m")

    def to_dict(self) -> dict:
        return {"a": self.a.tolist(), "b": self.b.tolist(), "patch": self.patch,
                "color": list(self.color), "width": self.width}


@dataclass(frozen=True, eq=False)
class SyntheticWorld:
    patches: list = field(default_factory=list)
    edges: list = field(default_factory=list)
    extent: tuple = ((-3.0, -2.5, 0.0), (3.0, 2.5, 3.0))

    def to_dict(self) -> dict:
        return {"patches": [p.to_dict() for p in self.patches],
                "edges": [e.to_dict() for e in self.edges],
                "extent": [list(self.extent[0]), list(self.extent[1])]}

    @classmethod
    def from_dict(cls, d: dict) -> SyntheticWorld:
        patches = [Patch(p["origin"], p["u"], p["v"], tuple(p["color"]), p["contrast"],
                         p["cell"], p["seed"]) for p in d["patches"]]
        edges = [Edge(e["a"], e["b"], e["patch"], tuple(e["color"]), e["width"])
                 for e in d["edges"]]
        return cls(patches, edges, (tuple(d["extent"][0]), tuple(d["extent"][1])))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1))

    @classmethod
    def load(cls, path) -> SyntheticWorld:
        return cls.from_dict(json.loads(Path(path).read_text()))

    def distance_to_surface(self, pts) -> np.ndarray:
        """Distance of each world point to the nearest patch rectangle."""
        pts = np.atleast_2d(np.asarray(pts, dtype=np.float64))
        best = np.full(len(pts), np.inf)
        for p in self.patches:
            rel = pts - p.origin
            s = np.clip(rel @ p.u / (p.u @ p.u), 0, 1)
            t = np.clip(rel @ p.v / (p.v @ p.v), 0, 1)
            q = p.origin + s[:, None] * p.u + t[:, None] * p.v
            best = np.minimum(best, np.linalg.norm(pts - q, axis=1))
        return best


def _hash01(ix: np.ndarray, iy: np.ndarray, seed: int, channel: int) -> np.ndarray:
    """Deterministic integer hash of lattice coordinates mapped to [0, 1)."""
    with np.errstate(over="ignore"):
        h = (ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
             ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
             ^ np.uint64((seed * 4 + channel) * 0x165667B19E3779F9 & 0xFFFFFFFFFFFFFFFF))
        h ^= h >> np.uint64(31)
        h *= np.uint64(0xBF58476D1CE4E5B9)
        h ^= h >> np.uint64(29)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def _value_noise(x: np.ndarray, y: np.ndarray, cell: float, seed: int) -> np.ndarray:
    gx, gy = x / cell, y / cell
    ix, iy = np.floor(gx), np.floor(gy)
    fx, fy = gx - ix, gy - iy
    fx = fx * fx * (3 - 2 * fx)
    fy = fy * fy * (3 - 2 * fy)
    ix = ix.astype(np.int64) + (1 << 20)
    iy = iy.astype(np.int64) + (1 << 20)
    out = np.empty(x.shape + (3,))
    for c in range(3):
        v00 = _hash01(ix, iy, seed, c)
        v10 = _hash01(ix + 1, iy, seed, c)
        v01 = _hash01(ix, iy + 1, seed, c)
        v11 = _hash01(ix + 1, iy + 1, seed, c)
        out[..., c] = (v00 * (1 - fx) * (1 - fy) + v10 * fx * (1 - fy)
                       + v01 * (1 - fx) * fy + v11 * fx * fy)
    return out


def patch_color(p: Patch, s: np.ndarray, t: np.ndarray) -> np.ndarray:
    """RGB in [0, 255] at surface coordinates (meters along u and v)."""
    base = np.broadcast_to(np.asarray(p.color, dtype=np.float64), s.shape + (3,)).copy()
    if p.contrast > 0:
        noise = 0.65 * _value_noise(s, t, p.cell, p.seed) + 0.35 * _value_noise(
            s, t, p.cell / 3.0, p.seed + 7919)
        base += p.contrast * (noise - 0.5) * 255.0
    return np.clip(base, 0, 255)


def render_frame(world: SyntheticWorld, pose: RigidTransform, K: CameraIntrinsics,
                 timestamp: float = 0.0, name: str = "") -> RgbdFrame:
    """Ray-cast every pixel against the world's patches.

    The depth image holds the camera-frame z of the first hit, so
    back-projecting a valid pixel and applying ``pose`` lands on the surface.
    """
    h, w = K.height, K.width
    u, v = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    dirs_c = np.stack([(u - K.cx) / K.fx, (v - K.cy) / K.fy, np.ones_like(u)], axis=-1)
    dirs_w = dirs_c @ pose.rotation.T
    o = pose.translation
    depth = np.full((h, w), np.inf)
    hit_patch = np.full((h, w), -1, dtype=np.int64)
    hit_s = np.zeros((h, w))
    hit_t = np.zeros((h, w))
    for k, p in enumerate(world.patches):
        n = np.cross(p.u, p.v)
        denom = dirs_w @ n
        with np.errstate(divide="ignore", invalid="ignore"):
            lam = ((p.origin - o) @ n) / denom
            pts = o + lam[..., None] * dirs_w
            rel = pts - p.origin
            uu, vv, uv = p.u @ p.u, p.v @ p.v, p.u @ p.v
            a, b = rel @ p.u, rel @ p.v
            det = uu * vv - uv * uv
            s = (a * vv - b * uv) / det
            t = (b * uu - a * uv) / det
            ok = (np.abs(denom) > 1e-12) & (lam > 1e-3) & (s >= 0) & (s <= 1) & (t >= 0) & (t <= 1)
        ok &= lam < depth
        depth[ok] = lam[ok]
        hit_patch[ok] = k
        hit_s[ok] = s[ok]
        hit_t[ok] = t[ok]
    if not np.any(hit_patch >= 0):
        raise EmptyViewError("no geometry in view")
    rgb = np.zeros((h, w, 3))
    for k, p in enumerate(world.patches):
        m = hit_patch == k
        if not m.any():
            continue
        su, sv = np.linalg.norm(p.u), np.linalg.norm(p.v)
        rgb[m] = patch_color(p, hit_s[m] * su, hit_t[m] * sv)
        pts = p.origin + hit_s[m, None] * p.u + hit_t[m, None] * p.v
        col = rgb[m]
        for e in world.edges:
            if e.patch != k:
                continue
            ab = e.b - e.a
            tt = np.clip((pts - e.a) @ ab / (ab @ ab), 0, 1)
            dist = np.linalg.norm(pts - (e.a + tt[:, None] * ab), axis=1)
            col[dist <= e.width / 2] = e.color
        rgb[m] = col
    depth[hit_patch < 0] = np.nan
    depth[depth > MAX_DEPTH] = np.nan
    return RgbdFrame(np.round(rgb).astype(np.uint8), depth, K, pose, timestamp, name)


# ---------------------------------------------------------------- world makers

def _box_faces(lo, hi, color, contrast, cell, seed):
    lo, hi = np.asarray(lo, float), np.asarray(hi, float)
    dx, dy, dz = hi - lo
    X, Y, Z = np.array([dx, 0, 0]), np.array([0, dy, 0]), np.array([0, 0, dz])
    faces = [
        (lo, Y, X),                    # bottom
        (lo + Z, X, Y),                # top
        (lo, X, Z), (lo + Y, Z, X),    # front / back
        (lo, Z, Y), (lo + X, Y, Z),    # left / right
    ]
    return [Patch(o, a, b, color, contrast, cell, seed + i) for i, (o, a, b) in enumerate(faces)]


def make_room_world(seed: int = 0, textured: bool = True, size=(6.0, 5.0, 3.0),
                    n_boxes: int = 4, n_edges: int = 24, cell: float = 0.15) -> SyntheticWorld:
    """Room with four walls, floor, ceiling, a few boxes and painted colour bands.

    ``textured=False`` gives uniformly coloured surfaces so that the painted
    bands are the dominant visual structure.
    """
    rng = np.random.default_rng(seed)
    sx, sy, sz = size
    lo = np.array([-sx / 2, -sy / 2, 0.0])
    contrast = 0.9 if textured else 0.0

    def color():
        return tuple(float(c) for c in rng.uniform(60, 200, size=3))

    X, Y, Z = np.array([sx, 0, 0]), np.array([0, sy, 0]), np.array([0, 0, sz])
    walls = [
        Patch(lo, X, Z, color(), contrast, cell, 1),             # y = -sy/2
        Patch(lo + Y, Z, X, color(), contrast, cell, 2),         # y = +sy/2
        Patch(lo, Z, Y, color(), contrast, cell, 3),             # x = -sx/2
        Patch(lo + X, Y, Z, color(), contrast, cell, 4),         # x = +sx/2
        Patch(lo, Y, X, color(), contrast, 1.3 * cell, 5),              # floor
        Patch(lo + Z, X, Y, color(), contrast, 1.3 * cell, 6),          # ceiling
    ]
    patches = list(walls)
    for i in range(n_boxes):
        ang = 2 * math.pi * (i + rng.uniform(0.2, 0.8)) / n_boxes
        cx, cy = 0.8 * sx / 2 * math.cos(ang), 0.8 * sy / 2 * math.sin(ang)
        w, d, hgt = rng.uniform(0.4, 0.8), rng.uniform(0.4, 0.8), rng.uniform(0.5, 1.2)
        patches += _box_faces([cx - w / 2, cy - d / 2, 0.0], [cx + w / 2, cy + d / 2, hgt],
                              color(), contrast, 0.55 * cell, 100 + 10 * i)
    edges = []
    for i in range(n_edges):
        k = int(rng.integers(0, 4))
        p = walls[k]
        vert, horiz = (p.v, p.u) if p.v[2] > 0 else (p.u, p.v)
        hlen, vlen = np.linalg.norm(horiz), np.linalg.norm(vert)
        if rng.uniform() < 0.5:
            L = float(rng.uniform(0.8, min(2.0, hlen - 0.4)))
            a = (p.origin + rng.uniform(0.2, hlen - L - 0.2) / hlen * horiz
                 + rng.uniform(0.3, vlen - 0.3) / vlen * vert)
            b = a + L / hlen * horiz
        else:
            L = float(rng.uniform(0.8, min(2.0, vlen - 0.4)))
            a = (p.origin + rng.uniform(0.2, hlen - 0.2) / hlen * horiz
                 + rng.uniform(0.2, vlen - L - 0.2) / vlen * vert)
            b = a + L / vlen * vert
        edges.append(Edge(a, b, k, tuple(float(c) for c in rng.choice([20.0, 235.0], size=3)),
                          float(rng.uniform(0.04, 0.08))))
    return SyntheticWorld(patches, edges, (tuple(lo), tuple(lo + np.array(size))))


def look_at(position, target, up=(0.0, 0.0, 1.0)) -> RigidTransform:
    """Camera-to-world pose at ``position`` looking toward ``target`` (y down)."""
    pos = np.asarray(position, float)
    z = np.asarray(target, float) - pos
    z /= np.linalg.norm(z)
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return RigidTransform(np.stack([x, y, z], axis=1), pos)


def make_trajectory(n: int, phase: float = 0.0, radius: float = 0.9, height: float = 1.4,
                    jitter: float = 0.0, seed: int = 0, span: float = 2 * math.pi,
                    start: float = 0.0) -> list[RigidTransform]:
    """Smooth camera path inside the room looking outward at the walls.

    The path covers ``span`` radians of a loop beginning at angle ``start``;
    ``phase`` shifts the samples along it (in units of one step).
    """
    rng = np.random.default_rng(seed)
    poses = []
    for i in range(n):
        a = start + span * (i + phase) / n
        pos = np.array([radius * math.cos(a), 0.8 * radius * math.sin(a),
                        height + 0.15 * math.sin(3 * a)])
        yaw = a + 0.6 * math.sin(2 * a)
        pitch = 0.15 * math.sin(5 * a) - 0.1
        if jitter:
            pos = pos + rng.normal(scale=jitter, size=3)
            yaw += rng.normal(scale=jitter)
        target = pos + np.array([math.cos(yaw) * math.cos(pitch),
                                 math.sin(yaw) * math.cos(pitch), math.sin(pitch)])
        poses.append(look_at(pos, target))
    return poses


def render_sequence(world: SyntheticWorld, poses, K: CameraIntrinsics,
                    prefix: str = "frame") -> list[RgbdFrame]:
    return [render_frame(world, p, K, float(i), f"{prefix}-{i:06d}") for i, p in enumerate(poses)]


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    if not os.access(p, os.W_OK):
        raise OSError(f"{p} is not writable")
    return p
