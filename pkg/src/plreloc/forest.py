"""Scene coordinate regression forests.

Trees split on pixel comparison features, choosing thresholds that maximise
the information gain of a full-covariance Gaussian over the world labels.
Leaves hold mean-shift modes of the labels together with the mean WHT
descriptor of each mode; prediction runs a best-first backtracking search and
keeps the mode whose descriptor is closest to the query patch.
"""

from __future__ import annotations

import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import ConfigValidationError
from .features import N_COEFFS, ImageStack, sample_split_candidates
from .geometry import COV_EPS, Gaussian3

MAGIC = b"PLF1"
_LOG_2PIE = math.log(2 * math.pi * math.e)


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 5
    images_per_tree: int = 500
    pixels_per_image: int = 5000
    max_depth: int = 25
    min_node_size: int = 50
    n_candidates: int = 500
    n_thresholds: int = 10
    offset_radius: float = 130.0
    max_split_samples: int = 20000
    bandwidth: float = 0.1
    max_modes: int = 5
    min_mode_weight: int = 10
    backtrack_leaves: int = 8

    def __post_init__(self):
        for k, v in asdict(self).items():
            if v is None or v <= 0:
                raise ConfigValidationError(f"ForestConfig.{k} must be positive, got {v!r}")


@dataclass(frozen=True, eq=False)
class LeafMode:
    mean: np.ndarray
    cov: np.ndarray
    descriptor: np.ndarray
    weight: int

    @property
    def gaussian(self) -> Gaussian3:
        return Gaussian3(self.mean, self.cov)


# ------------------------------------------------------------- entropy & gain

def _floored_logdet(cov: np.ndarray, eps: float = COV_EPS) -> np.ndarray:
    w = np.linalg.eigvalsh(0.5 * (cov + np.swapaxes(cov, -1, -2)))
    return np.log(np.maximum(w, eps)).sum(axis=-1)


def gaussian_entropy(labels, eps: float = COV_EPS) -> float:
    """Differential entropy (nats) of a full-covariance Gaussian fit to ``labels``.

    Uses the unbiased sample covariance with eigenvalues floored at ``eps``;
    fewer than two labels give 0.
    """
    y = np.asarray(labels, dtype=np.float64).reshape(-1, 3)
    if len(y) < 2:
        return 0.0
    cov = np.cov(y, rowvar=False)
    return 0.5 * (3 * _LOG_2PIE + float(_floored_logdet(cov, eps)))


def information_gain(parent, left, right, eps: float = COV_EPS) -> float:
    n, nl, nr = len(parent), len(left), len(right)
    if n == 0:
        return 0.0
    return (gaussian_entropy(parent, eps) - nl / n * gaussian_entropy(left, eps)
            - nr / n * gaussian_entropy(right, eps))


def evaluate_split(f: float, tau: float) -> str:
    """Left when the response is at most the threshold."""
    if f is None or not np.isfinite(f):
        raise ValueError("invalid response is not routed")
    return "left" if f <= tau else "right"


_TRI = [(0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2)]


def _label_stats(y: np.ndarray) -> np.ndarray:
    """Per-sample sufficient statistics [1, y, upper(y y^T)] as an (n, 10) array."""
    cols = [np.ones(len(y)), y[:, 0], y[:, 1], y[:, 2]]
    cols += [y[:, i] * y[:, j] for i, j in _TRI]
    return np.stack(cols, axis=1)


def _entropy_from_stats(s: np.ndarray, eps: float = COV_EPS) -> np.ndarray:
    m = s[..., 0]
    safe = np.maximum(m, 2.0)
    mu = s[..., 1:4] / safe[..., None]
    second = np.empty(s.shape[:-1] + (3, 3))
    for k, (i, j) in enumerate(_TRI):
        second[..., i, j] = second[..., j, i] = s[..., 4 + k]
    cov = (second - safe[..., None, None] * mu[..., :, None] * mu[..., None, :]) / (safe - 1)[..., None, None]
    ent = 0.5 * (3 * _LOG_2PIE + _floored_logdet(cov, eps))
    return np.where(m >= 2, ent, 0.0)


# --------------------------------------------------------------------- leaves

def mean_shift(points, bandwidth: float, max_seeds: int = 400, tol: float = 1e-4,
               max_iter: int = 300, max_support: int = 2000):
    """Gaussian-kernel mean shift; returns (seed indices, converged seed positions).

    Large inputs use evenly spaced subsets as seeds and as kernel support.
    A seed stops moving once its shift falls below ``tol * bandwidth``.
    """
    pts = np.asarray(points, dtype=np.float64)
    n = len(pts)
    seed_idx = np.arange(n) if n <= max_seeds else np.linspace(0, n - 1, max_seeds).astype(np.int64)
    x = pts[seed_idx].copy()
    if n > max_support:
        pts = pts[np.linspace(0, n - 1, max_support).astype(np.int64)]
    inv = -0.5 / bandwidth**2
    pn = (pts**2).sum(axis=1)
    active = np.arange(len(x))
    for _ in range(max_iter):
        xa = x[active]
        d2 = pn[None, :] - 2.0 * (xa @ pts.T)  # |x|^2 is constant per row and cancels below
        w = np.exp(inv * (d2 - d2.min(axis=1, keepdims=True)))
        new = (w @ pts) / w.sum(axis=1, keepdims=True)
        moving = ((new - xa) ** 2).sum(axis=1) >= (tol * bandwidth) ** 2
        x[active] = new
        active = active[moving]
        if len(active) == 0:
            break
    return seed_idx, x


def fit_leaf_modes(labels, descriptors, bandwidth: float = 0.1, max_modes: int = 5,
                   min_weight: int = 10, eps: float = COV_EPS) -> list[LeafMode]:
    labels = np.asarray(labels, dtype=np.float64).reshape(-1, 3)
    descriptors = np.asarray(descriptors, dtype=np.float32).reshape(len(labels), -1)
    if len(labels) == 0:
        raise ValueError("fit_leaf_modes needs at least one sample")
    seed_idx, conv = mean_shift(labels, bandwidth)
    centers: list[np.ndarray] = []
    seed_label = np.empty(len(seed_idx), dtype=np.int64)
    for k, c in enumerate(conv):
        for j, cc in enumerate(centers):
            if np.linalg.norm(c - cc) <= bandwidth / 2:
                seed_label[k] = j
                break
        else:
            seed_label[k] = len(centers)
            centers.append(c)
    if len(seed_idx) == len(labels):
        member = seed_label
    else:
        cs = np.asarray(centers)
        member = ((labels[:, None, :] - cs[None]) ** 2).sum(axis=2).argmin(axis=1)
    counts = np.bincount(member, minlength=len(centers))
    order = np.argsort(-counts, kind="stable")
    chosen = [j for j in order if counts[j] >= min_weight][:max_modes] or [order[0]]
    modes = []
    for j in chosen:
        y = labels[member == j]
        cov = np.cov(y, rowvar=False) if len(y) > 1 else np.zeros((3, 3))
        w, v = np.linalg.eigh(0.5 * (cov + cov.T))
        if w.min() < eps:
            cov = (v * np.maximum(w, eps)) @ v.T
        cov = 0.5 * (cov + cov.T)
        modes.append(LeafMode(y.mean(axis=0), cov, descriptors[member == j].mean(axis=0),
                              int(len(y))))
    return modes


# ----------------------------------------------------------------------- tree

@dataclass(eq=False)
class Tree:
    """Flat preorder tree. Split nodes have ``left``/``right`` >= 0, leaves ``leaf`` >= 0."""

    dx: np.ndarray
    dy: np.ndarray
    c1: np.ndarray
    c2: np.ndarray
    tau: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf: np.ndarray
    mode_mean: np.ndarray
    mode_cov: np.ndarray
    mode_desc: np.ndarray
    mode_weight: np.ndarray
    leaf_modes: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.left)

    @property
    def n_leaves(self) -> int:
        return len(self.leaf_modes)

    def depth(self) -> int:
        best, stack = 0, [(0, 0)]
        while stack:
            node, d = stack.pop()
            best = max(best, d)
            if self.left[node] >= 0:
                stack += [(self.left[node], d + 1), (self.right[node], d + 1)]
        return best

    def modes_of_leaf(self, leaf: int) -> list[LeafMode]:
        return [LeafMode(self.mode_mean[k], self.mode_cov[k], self.mode_desc[k], int(self.mode_weight[k]))
                for k in self.leaf_modes[leaf] if k >= 0]

    def route_greedy(self, stack: ImageStack, fidx, px, py, d) -> np.ndarray:
        """Leaf index reached by plain descent (invalid responses go left)."""
        node = np.zeros(len(px), dtype=np.int64)
        while True:
            inner = self.left[node] >= 0
            if not inner.any():
                return self.leaf[node]
            q = np.nonzero(inner)[0]
            n = node[q]
            f, ok = stack.responses(fidx[q], px[q], py[q], d[q], self.dx[n], self.dy[n],
                                    self.c1[n], self.c2[n])
            go_right = ok & (f > self.tau[n])
            node[q] = np.where(go_right, self.right[n], self.left[n])


class _TreeBuilder:
    def __init__(self, data: TrainingData, config: ForestConfig, rng: np.random.Generator):
        self.data = data
        self.cfg = config
        self.rng = rng
        self.nodes: list[list] = []
        self.leaves: list[list[LeafMode]] = []

    def grow(self, idx: np.ndarray, level: int) -> int:
        node = len(self.nodes)
        self.nodes.append(None)
        split = None
        if level < self.cfg.max_depth and len(idx) >= self.cfg.min_node_size:
            split = self.best_split(idx)
        if split is not None:
            dx, dy, c1, c2, tau, _ = split
            f, ok = self.data.responses(idx, dx, dy, c1, c2)
            # invalid responses take no part in the gain but follow the left branch, as at test time
            right = ok & (f > tau)
            li, ri = idx[~right], idx[right]
            if len(li) and len(ri):
                self.nodes[node] = [dx, dy, c1, c2, tau, -1, -1, -1]
                self.nodes[node][5] = self.grow(li, level + 1)
                self.nodes[node][6] = self.grow(ri, level + 1)
                return node
        self.nodes[node] = [0.0, 0.0, 0, 0, 0.0, -1, -1, len(self.leaves)]
        d = self.data
        self.leaves.append(fit_leaf_modes(d.labels[idx], d.descriptors[idx], self.cfg.bandwidth,
                                          self.cfg.max_modes, self.cfg.min_mode_weight))
        return node

    def best_split(self, idx: np.ndarray):
        cfg, rng, data = self.cfg, self.rng, self.data
        if len(idx) > cfg.max_split_samples:
            ev = np.sort(rng.choice(idx, cfg.max_split_samples, replace=False))
        else:
            ev = idx
        n = len(ev)
        y = data.labels[ev]
        stats = _label_stats(y - y.mean(axis=0))
        cands = sample_split_candidates(rng, cfg.n_candidates, cfg.offset_radius)
        K = cfg.n_thresholds
        qpos = np.arange(1, K + 1) / (K + 1)
        chunk = max(1, int(4_000_000 // max(1, n * K)))
        best = (0.0, None)
        for s in range(0, len(cands), chunk):
            c = cands[s:s + chunk]
            f, ok = data.responses(ev, c.dx[:, None], c.dy[:, None], c.c1[:, None], c.c2[:, None])
            nq = min(n, 1024)
            sub = np.sort(np.where(ok[:, :nq], f[:, :nq], np.inf), axis=1)
            nv = ok[:, :nq].sum(axis=1)
            pos = np.floor(qpos[None, :] * np.maximum(nv - 1, 0)[:, None]).astype(np.int64)
            tau = np.take_along_axis(sub, pos, axis=1)
            tau[nv == 0] = np.inf
            left = ok[:, None, :] & (f[:, None, :] <= tau[:, :, None])
            lstats = (left.reshape(-1, n).astype(np.float64) @ stats).reshape(len(c), K, 10)
            tstats = ok.astype(np.float64) @ stats
            rstats = tstats[:, None, :] - lstats
            ml, mr, mt = lstats[..., 0], rstats[..., 0], tstats[:, 0]
            gain = (_entropy_from_stats(tstats)[:, None]
                    - ml / np.maximum(mt, 1)[:, None] * _entropy_from_stats(lstats)
                    - mr / np.maximum(mt, 1)[:, None] * _entropy_from_stats(rstats))
            gain[(ml < 1) | (mr < 1)] = -np.inf
            k = int(np.argmax(gain))
            g = float(gain.flat[k])
            if g > best[0]:
                ci, ti = divmod(k, K)
                best = (g, (float(c.dx[ci]), float(c.dy[ci]), int(c.c1[ci]), int(c.c2[ci]),
                            float(tau[ci, ti]), g))
        return best[1]

    def build(self) -> Tree:
        self.grow(np.arange(len(self.data.labels)), 0)
        nodes = np.array(self.nodes, dtype=object)
        modes = [m for leaf in self.leaves for m in leaf]
        leaf_modes = np.full((len(self.leaves), self.cfg.max_modes), -1, dtype=np.int64)
        k = 0
        for i, leaf in enumerate(self.leaves):
            leaf_modes[i, :len(leaf)] = np.arange(k, k + len(leaf))
            k += len(leaf)
        return Tree(
            dx=nodes[:, 0].astype(np.float64), dy=nodes[:, 1].astype(np.float64),
            c1=nodes[:, 2].astype(np.int64), c2=nodes[:, 3].astype(np.int64),
            tau=nodes[:, 4].astype(np.float64), left=nodes[:, 5].astype(np.int64),
            right=nodes[:, 6].astype(np.int64), leaf=nodes[:, 7].astype(np.int64),
            mode_mean=np.array([m.mean for m in modes]).reshape(-1, 3),
            mode_cov=np.array([m.cov for m in modes]).reshape(-1, 3, 3),
            mode_desc=np.array([m.descriptor for m in modes], dtype=np.float32).reshape(-1, N_COEFFS),
            mode_weight=np.array([m.weight for m in modes], dtype=np.int64),
            leaf_modes=leaf_modes)


@dataclass(eq=False)
class TrainingData:
    """Samples gathered for one tree, with the image stack they index into."""

    stack: ImageStack
    fidx: np.ndarray
    px: np.ndarray
    py: np.ndarray
    labels: np.ndarray
    descriptors: np.ndarray
    depth: np.ndarray = field(init=False)

    def __post_init__(self):
        self.fidx = np.asarray(self.fidx, dtype=np.int64)
        self.px = np.asarray(self.px, dtype=np.int64)
        self.py = np.asarray(self.py, dtype=np.int64)
        self.labels = np.asarray(self.labels, dtype=np.float64)
        self.depth = self.stack.depth[self.fidx, self.py, self.px].astype(np.float64)
        if not np.all(np.isfinite(self.depth)):
            raise ValueError("training samples must have valid depth")

    def responses(self, idx, dx, dy, c1, c2):
        return self.stack.responses(self.fidx[idx], self.px[idx], self.py[idx], self.depth[idx],
                                    dx, dy, c1, c2)


def train_tree(data: TrainingData, config: ForestConfig, rng) -> Tree:
    if len(data.labels) == 0:
        raise ValueError("train_tree needs samples")
    return _TreeBuilder(data, config, np.random.default_rng(rng)).build()


# ----------------------------------------------------------------- prediction

@dataclass(eq=False)
class Prediction:
    """One candidate per tree for each query: (Q, T, 3) means, (Q, T, 3, 3) covs."""

    means: np.ndarray
    covs: np.ndarray
    dists: np.ndarray

    def candidates(self, q: int) -> list[tuple[Gaussian3, float]]:
        return [(Gaussian3(self.means[q, t], self.covs[q, t]), float(self.dists[q, t]))
                for t in range(self.means.shape[1])]


def backtrack_tree(tree: Tree, stack: ImageStack, fidx, px, py, d, desc, max_leaves: int):
    """Best-first search visiting up to ``max_leaves`` leaves per query.

    Returns the global mode index with the smallest descriptor distance and
    that distance. Deferred branches are ranked by |f - tau| at their split;
    an invalid response descends left and defers the right child at
    priority 0.
    """
    Q = len(px)
    qs = np.arange(Q)
    cap = max_leaves * (tree.depth() + 1) + 1
    pq_node = np.zeros((Q, cap), dtype=np.int64)
    pq_pri = np.full((Q, cap), np.inf)
    n_push = np.zeros(Q, dtype=np.int64)
    best_d = np.full(Q, np.inf)
    best_m = np.full(Q, -1, dtype=np.int64)
    desc = np.asarray(desc, dtype=np.float32).astype(np.float64)
    for visit in range(max_leaves):
        if visit == 0:
            node = np.zeros(Q, dtype=np.int64)
            active = np.ones(Q, dtype=bool)
        else:
            j = pq_pri.argmin(axis=1)
            active = np.isfinite(pq_pri[qs, j])
            if not active.any():
                break
            node = pq_node[qs, j]
            pq_pri[qs[active], j[active]] = np.inf
        a = np.nonzero(active)[0]
        cur = node[a]
        while True:
            inner = tree.left[cur] >= 0
            if not inner.any():
                break
            ii = np.nonzero(inner)[0]
            q = a[ii]
            n = cur[ii]
            f, ok = stack.responses(fidx[q], px[q], py[q], d[q], tree.dx[n], tree.dy[n],
                                    tree.c1[n], tree.c2[n])
            right = ok & (f > tree.tau[n])
            go = np.where(right, tree.right[n], tree.left[n])
            other = np.where(right, tree.left[n], tree.right[n])
            pri = np.where(ok, np.abs(f.astype(np.float64) - tree.tau[n]), 0.0)
            slot = n_push[q]
            pq_node[q, slot] = other
            pq_pri[q, slot] = pri
            n_push[q] += 1
            cur[ii] = go
        modes = tree.leaf_modes[tree.leaf[cur]]
        has = modes >= 0
        diff = tree.mode_desc[np.where(has, modes, 0)].astype(np.float64) - desc[a, None, :]
        dist = np.where(has, np.sqrt((diff**2).sum(axis=2)), np.inf)
        k = dist.argmin(axis=1)
        dk = dist[np.arange(len(a)), k]
        better = dk < best_d[a]
        best_d[a[better]] = dk[better]
        best_m[a[better]] = modes[np.arange(len(a)), k][better]
    return best_m, best_d


@dataclass(eq=False)
class Forest:
    trees: list
    kind: str
    config: ForestConfig

    def predict(self, stack: ImageStack, fidx, px, py, desc, max_leaves: int | None = None) -> Prediction:
        max_leaves = max_leaves or self.config.backtrack_leaves
        fidx = np.asarray(fidx, dtype=np.int64)
        px = np.asarray(px, dtype=np.int64)
        py = np.asarray(py, dtype=np.int64)
        d = stack.depth[fidx, py, px].astype(np.float64)
        if not np.all(np.isfinite(d)):
            raise ValueError("query pixels must have valid depth")
        Q, T = len(px), len(self.trees)
        means, covs, dists = np.zeros((Q, T, 3)), np.zeros((Q, T, 3, 3)), np.zeros((Q, T))
        for t, tree in enumerate(self.trees):
            m, dist = backtrack_tree(tree, stack, fidx, px, py, d, desc, max_leaves)
            means[:, t] = tree.mode_mean[m]
            covs[:, t] = tree.mode_cov[m]
            dists[:, t] = dist
        return Prediction(means, covs, dists)

    # ---------------------------------------------------------- serialization

    def to_bytes(self) -> bytes:
        out = io.BytesIO()
        out.write(MAGIC)
        head = json.dumps({"kind": self.kind, "config": asdict(self.config),
                           "n_trees": len(self.trees), "version": 1}, sort_keys=True).encode()
        _chunk(out, b"HEAD", head)
        for tree in self.trees:
            _chunk(out, b"TREE", _tree_bytes(tree))
        _chunk(out, b"END\0", b"")
        return out.getvalue()

    @classmethod
    def from_bytes(cls, data: bytes) -> Forest:
        if data[:4] != MAGIC:
            raise ValueError("not a forest file (bad magic)")
        pos, head, trees = 4, None, []
        while pos < len(data):
            tag, size = struct.unpack_from("<4sI", data, pos)
            pos += 8
            payload = data[pos:pos + size]
            pos += size
            if tag == b"HEAD":
                head = json.loads(payload)
            elif tag == b"TREE":
                trees.append(_tree_from_bytes(payload, head["config"]["max_modes"]))
            elif tag == b"END\0":
                break
        if head is None or len(trees) != head["n_trees"]:
            raise ValueError("truncated forest file")
        return cls(trees, head["kind"], ForestConfig(**head["config"]))

    def save(self, path) -> None:
        with open(path, "wb") as fh:
            fh.write(self.to_bytes())

    @classmethod
    def load(cls, path) -> Forest:
        with open(path, "rb") as fh:
            return cls.from_bytes(fh.read())

    def debug_dump(self) -> str:
        """Human-readable JSON mirror of the binary content."""
        def node_json(tree, i):
            if tree.left[i] >= 0:
                return {"split": {"dx": tree.dx[i], "dy": tree.dy[i], "c1": int(tree.c1[i]),
                                  "c2": int(tree.c2[i]), "tau": tree.tau[i]},
                        "left": node_json(tree, tree.left[i]), "right": node_json(tree, tree.right[i])}
            return {"modes": [{"mean": m.mean.tolist(), "cov": m.cov.tolist(), "weight": m.weight,
                               "descriptor": [float(v) for v in m.descriptor]}
                              for m in tree.modes_of_leaf(tree.leaf[i])]}
        return json.dumps({"kind": self.kind, "config": asdict(self.config),
                           "trees": [node_json(t, 0) for t in self.trees]}, indent=1)

    def report(self) -> dict:
        return {"kind": self.kind, "trees": [
            {"nodes": t.n_nodes, "leaves": t.n_leaves, "depth": t.depth(), "modes": int(len(t.mode_weight)),
             "mean_modes_per_leaf": float(len(t.mode_weight) / max(1, t.n_leaves)),
             "mean_mode_weight": float(t.mode_weight.mean()) if len(t.mode_weight) else 0.0}
            for t in self.trees]}


def _chunk(out, tag: bytes, payload: bytes) -> None:
    out.write(struct.pack("<4sI", tag, len(payload)))
    out.write(payload)


_SPLIT = struct.Struct("<ddBBd")
_MODE = struct.Struct("<3d6dI")


def _tree_bytes(tree: Tree) -> bytes:
    out = io.BytesIO()
    out.write(struct.pack("<I", tree.n_nodes))
    for i in range(tree.n_nodes):
        if tree.left[i] >= 0:
            out.write(b"\x00")
            out.write(_SPLIT.pack(tree.dx[i], tree.dy[i], tree.c1[i], tree.c2[i], tree.tau[i]))
        else:
            ms = [k for k in tree.leaf_modes[tree.leaf[i]] if k >= 0]
            out.write(b"\x01")
            out.write(struct.pack("<H", len(ms)))
            for k in ms:
                c = tree.mode_cov[k]
                out.write(_MODE.pack(*tree.mode_mean[k], *(c[i_, j_] for i_, j_ in _TRI),
                                     int(tree.mode_weight[k])))
                out.write(tree.mode_desc[k].astype("<f4").tobytes())
    return out.getvalue()


def _tree_from_bytes(buf: bytes, max_modes: int) -> Tree:
    (n_nodes,), pos = struct.unpack_from("<I", buf, 0), 4
    cols = {k: [] for k in ("dx", "dy", "c1", "c2", "tau", "left", "right", "leaf")}
    means, covs, descs, weights, leaf_modes = [], [], [], [], []
    for _ in range(n_nodes):
        kind = buf[pos]
        pos += 1
        if kind == 0:
            dx, dy, c1, c2, tau = _SPLIT.unpack_from(buf, pos)
            pos += _SPLIT.size
            vals = (dx, dy, c1, c2, tau, -1, -1, -1)
        else:
            (nm,), pos = struct.unpack_from("<H", buf, pos), pos + 2
            row = []
            for _ in range(nm):
                v = _MODE.unpack_from(buf, pos)
                pos += _MODE.size
                c = np.zeros((3, 3))
                for k, (a, b) in enumerate(_TRI):
                    c[a, b] = c[b, a] = v[3 + k]
                row.append(len(means))
                means.append(v[:3])
                covs.append(c)
                weights.append(v[9])
                descs.append(np.frombuffer(buf, dtype="<f4", count=N_COEFFS, offset=pos))
                pos += 4 * N_COEFFS
            leaf_modes.append(row + [-1] * (max_modes - len(row)))
            vals = (0.0, 0.0, 0, 0, 0.0, -1, -1, len(leaf_modes) - 1)
        for k, v in zip(cols, vals):
            cols[k].append(v)
    # preorder: a split's left child is the next node; its right child follows the left subtree
    def link(i: int) -> int:
        if cols["leaf"][i] >= 0:
            return i + 1
        cols["left"][i] = i + 1
        nxt = link(i + 1)
        cols["right"][i] = nxt
        return link(nxt)
    link(0)
    return Tree(
        dx=np.array(cols["dx"], dtype=np.float64), dy=np.array(cols["dy"], dtype=np.float64),
        c1=np.array(cols["c1"], dtype=np.int64), c2=np.array(cols["c2"], dtype=np.int64),
        tau=np.array(cols["tau"], dtype=np.float64), left=np.array(cols["left"], dtype=np.int64),
        right=np.array(cols["right"], dtype=np.int64), leaf=np.array(cols["leaf"], dtype=np.int64),
        mode_mean=np.array(means, dtype=np.float64).reshape(-1, 3),
        mode_cov=np.array(covs, dtype=np.float64).reshape(-1, 3, 3),
        mode_desc=np.array(descs, dtype=np.float32).reshape(-1, N_COEFFS),
        mode_weight=np.array(weights, dtype=np.int64),
        leaf_modes=np.array(leaf_modes, dtype=np.int64).reshape(-1, max_modes))
