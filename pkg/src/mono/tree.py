"""Nearest-neighbor routing trees over function samples.

Levels are indexed 0..h: level 0 holds the single root, level t holds v^t
centers, and level h holds the leaves.  Levels 1..h come from per-level
k-means over the sample cloud (centers snapped onto samples so they stay
inside the sampled set); the root is the sample minimizing the total L^2
distance to the level-1 centers.  All distances are quadrature L^2.
Ties anywhere resolve to the smallest index.

Per-level k-means is seeded with ``seed + level`` so trees of different
heights built from the same cloud and seed share their common levels
("nested builds").

Tree file format ("MONOTREE"): 8-byte magic, u32 version, u32 header
length, UTF-8 key=value header, then per level per node: parent index
(i32, -1 for the root), f64 center values, u8 has-mlp flag and, when set,
the compressed MLP (layer count, widths, tensors); finally the retained
sample cloud as raw f64 blocks.
"""

from __future__ import annotations

import math
import struct
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .gridfn import GridFunction, GridSpec, ShapeError, l2_distance
from .kmeans import kmeans_fit
from .net import FitResult, Mlp, MlpSpec, TrainBudget, fit_function

MAGIC_TREE = b"MONOTREE"


class TreeCapacityError(ValueError):
    """Fewer samples than the requested leaf count."""


@dataclass(frozen=True)
class TreeSpec:
    valency: int
    height: int
    target_radius: float = 1.0

    def __post_init__(self):
        if self.valency < 2:
            raise ValueError("valency must be at least 2")
        if self.height < 0:
            raise ValueError("height must be non-negative")
        if self.target_radius <= 0:
            raise ValueError("target radius must be positive")

    def level_count(self, level: int) -> int:
        return self.valency ** level


@dataclass
class TreeNode:
    center: GridFunction
    sample_index: int
    parent: Optional[int] = None
    children: list = field(default_factory=list)
    mlp: Optional[Mlp] = None
    mlp_sup_error: Optional[float] = None


@dataclass
class RouteResult:
    leaf: int
    path: list  # [(level, index), ...] from root to leaf
    scans: int
    dead_end: bool = False


class RoutingTree:
    def __init__(self, spec: TreeSpec, levels: list, cloud: list,
                 use_compressed: bool = False):
        self.spec = spec
        self.levels = levels
        self.cloud = cloud
        self.use_compressed = use_compressed
        self.grid = levels[0][0].center.spec

    @property
    def height(self) -> int:
        return len(self.levels) - 1

    @property
    def leaves(self) -> list:
        return self.levels[-1]

    @classmethod
    def single_node(cls, center: GridFunction) -> "RoutingTree":
        """The trivial tree: the root is the only node and the only leaf."""
        node = TreeNode(center=center, sample_index=0)
        spec = TreeSpec(valency=2, height=0)
        return cls(spec, [[node]], cloud=[center])

    def node_center_values(self, level: int, index: int) -> np.ndarray:
        node = self.levels[level][index]
        if self.use_compressed and node.mlp is not None:
            return node.mlp.forward(self.grid.nodes()).reshape(-1)
        return node.center.values

    def center_scalar_count(self) -> int:
        return sum(n.center.values.size for lvl in self.levels for n in lvl)


def _embed(samples: list, weights: np.ndarray) -> np.ndarray:
    """Stack samples as rows scaled so Euclidean distance == quadrature L^2."""
    sqw = np.sqrt(weights)
    return np.stack([(f.field * sqw[:, None]).ravel() for f in samples])


def _snap_indices(centers: np.ndarray, X: np.ndarray) -> list[int]:
    """Nearest sample per center, smallest index on ties."""
    out = []
    for c in centers:
        d = np.sum((X - c) ** 2, axis=1)
        out.append(int(np.argmin(d)))
    return out


def build_tree(samples: list, spec: TreeSpec, seed: int) -> RoutingTree:
    """Level-by-level k-means routing tree over a shared-grid sample cloud."""
    if not samples:
        raise TreeCapacityError("no samples")
    grid = samples[0].spec
    for s in samples[1:]:
        if s.spec != grid:
            raise ShapeError("all samples must share one grid spec")
    n = len(samples)
    if spec.height >= 1 and n < spec.level_count(spec.height):
        raise TreeCapacityError(
            f"{n} samples cannot support {spec.level_count(spec.height)} leaves")
    weights = grid.quad_weights()
    X = _embed(samples, weights)
    if spec.height == 0:
        centers, _, _ = kmeans_fit(X, 1, seed=seed)
        i = _snap_indices(centers, X)[0]
        return RoutingTree(spec, [[TreeNode(center=samples[i], sample_index=i)]],
                           cloud=list(samples))

    level_nodes: list[list[TreeNode]] = []
    for level in range(1, spec.height + 1):
        k = spec.level_count(level)
        centers, _, _ = kmeans_fit(X, k, seed=seed + level)
        idx = sorted(_snap_indices(centers, X))
        level_nodes.append([TreeNode(center=samples[i], sample_index=i)
                            for i in idx])

    # Root: the sample with the smallest total distance to level-1 centers.
    level1 = np.stack([X[node.sample_index] for node in level_nodes[0]])
    scores = np.stack([np.linalg.norm(X - c, axis=1)
                       for c in level1], axis=1).sum(axis=1)
    root_idx = int(np.argmin(scores))
    root = TreeNode(center=samples[root_idx], sample_index=root_idx)
    levels = [[root]] + level_nodes

    # Parent = nearest previous-level center (smallest index on ties).
    for t in range(1, len(levels)):
        prev = np.stack([X[node.sample_index] for node in levels[t - 1]])
        for j, node in enumerate(levels[t]):
            d = np.sum((prev - X[node.sample_index]) ** 2, axis=1)
            p = int(np.argmin(d))
            node.parent = p
            levels[t - 1][p].children.append(j)
    return RoutingTree(spec, levels, cloud=list(samples))


def route(tree: RoutingTree, u: GridFunction) -> RouteResult:
    """Greedy descent: nearest child at each level, smallest index on ties.

    A childless internal node (possible because children are fixed by the
    nearest-parent rule) falls back to scanning the whole next level.
    """
    if (u.spec.dim, u.spec.m) != (tree.grid.dim, tree.grid.m):
        raise ShapeError("input grid does not match tree grid")
    w = tree.grid.quad_weights()
    uvec = (u.field * np.sqrt(w)[:, None]).ravel()

    def dist(level, index):
        c = tree.node_center_values(level, index)
        cvec = (c.reshape(tree.grid.npoints, -1) * np.sqrt(w)[:, None]).ravel()
        return float(np.linalg.norm(uvec - cvec))

    path = [(0, 0)]
    current = 0
    scans = 0
    dead_end = False
    for level in range(tree.height):
        kids = tree.levels[level][current].children
        if not kids:
            kids = list(range(len(tree.levels[level + 1])))
            dead_end = True
        dists = [dist(level + 1, j) for j in kids]
        scans += 1
        current = kids[int(np.argmin(dists))]
        path.append((level + 1, current))
    return RouteResult(leaf=current, path=path, scans=scans, dead_end=dead_end)


@dataclass
class CoveringAudit:
    radius: float
    target_radius: float
    implied_constant: float


def audit_covering(tree: RoutingTree, test_set: list) -> CoveringAudit:
    """Exact brute force of max over the test set of min leaf distance."""
    radius = 0.0
    for u in test_set:
        best = min(l2_distance(u, node.center) for node in tree.leaves)
        radius = max(radius, best)
    return CoveringAudit(radius=radius, target_radius=tree.spec.target_radius,
                         implied_constant=radius / tree.spec.target_radius)


def greedy_gap(tree: RoutingTree, test_set: list) -> float:
    """Max over inputs of greedy-routed leaf distance minus global nearest
    leaf distance; exactly zero on height-1 trees."""
    gap = 0.0
    for u in test_set:
        routed = tree.leaves[route(tree, u).leaf]
        d_routed = l2_distance(u, routed.center)
        d_best = min(l2_distance(u, node.center) for node in tree.leaves)
        gap = max(gap, d_routed - d_best)
    return gap


@dataclass
class LevelSlackReport:
    level: int
    lhs: float
    exact_min: float
    sampled_min: float
    slack: float
    satisfied: bool


def audit_kmeans_recursion(tree: RoutingTree, trials: int = 64,
                           seed: int = 0) -> list[LevelSlackReport]:
    """Per-level check of the hierarchical k-means inequality.

    For each consecutive level pair, LHS is the all-pairs distance sum
    between the stored centers; the reference minimum fixes the child level
    and minimizes over parent tuples drawn from the retained cloud.  That
    energy decomposes per parent, so the cloud minimum is exactly
    (parent count) * (best single-candidate score); ``trials`` random
    tuples provide an independent upper-bound cross-check.  The allowed
    slack is 2 * (audited covering radius) * v^(2t+1).
    """
    rng = np.random.default_rng(seed)
    cover = audit_covering(tree, tree.cloud).radius
    v = tree.spec.valency
    w = tree.grid.quad_weights()
    X = _embed(tree.cloud, w)
    reports = []
    for t in range(tree.height):
        parents = np.stack([X[n.sample_index] for n in tree.levels[t]])
        children = np.stack([X[n.sample_index] for n in tree.levels[t + 1]])
        # exact difference form (the expanded quadratic form loses digits)
        dmat = np.stack([np.linalg.norm(X - c, axis=1)
                         for c in children], axis=1)
        scores = dmat.sum(axis=1)  # total distance of each candidate to children
        lhs = 0.0
        for p in parents:
            lhs += float(np.sum(np.linalg.norm(children - p, axis=1)))
        exact_min = len(parents) * float(np.min(scores))
        sampled = min(float(scores[rng.integers(0, len(X), size=len(parents))].sum())
                      for _ in range(max(1, trials)))
        slack = 2.0 * cover * float(v) ** (2 * t + 1)
        reports.append(LevelSlackReport(
            level=t, lhs=lhs, exact_min=exact_min, sampled_min=sampled,
            slack=slack, satisfied=lhs <= slack + exact_min + 1e-9))
    return reports


# -- counting formulas -----------------------------------------------------------


@dataclass(frozen=True)
class TreeCounts:
    required_centers: int
    height: int
    leaves: int
    node_bound: float
    node_depth: float
    node_width: float


def tree_counting(delta: float, valency: int, d1: int, s1: float) -> TreeCounts:
    """Closed-form tree size/architecture formulas for covering radius delta.

    k = ceil(delta^(-d1/2)) centers are needed; the tree then has height
    ceil(log_v(2^k - 1)) (clamped to 1, root = leaf) and v^height leaves.
    The node bound is evaluated exactly as printed, with c = 1/ln(v); it is
    undefined (nan) when its denominator vanishes at trees of fewer than
    two effective levels.  Node depth and width need the smoothness margin
    S = s1 - ceil(d1/2) - 1 > 0.
    """
    if delta <= 0 or valency < 2 or d1 < 1:
        raise ValueError("need delta > 0, valency >= 2, d1 >= 1")
    if s1 <= d1:
        raise ValueError("counting formulas require s1 > d1")
    k = math.ceil(delta ** (-d1 / 2.0))
    if k > 4096:
        raise TreeCapacityError("delta too small for exact integer counting")
    centers = 2 ** k - 1
    height = max(1, math.ceil(math.log(centers, valency))) if centers > 1 else 1
    # guard float fuzz in log: ceil via integer comparison
    while valency ** height < centers:
        height += 1
    while height > 1 and valency ** (height - 1) >= centers:
        height -= 1
    height = max(1, height)
    leaves = valency ** height

    c = 1.0 / math.log(valency)
    t = math.ceil(c * math.log(centers, valency)) if centers > 1 else 0
    if t <= 1:
        node_bound = float("nan")
    else:
        try:
            node_bound = (valency ** (t + 1) - 1) / (t - 1)
        except OverflowError:
            node_bound = float("inf")

    S = s1 - math.ceil(d1 / 2.0) - 1.0
    if S <= 0:
        node_depth = float("nan")
        node_width = 0.0
    else:
        inner = math.ceil(delta ** (d1 / (2.0 * S)))
        node_depth = 2 * d1 + 18.0 * S * S * (inner + 2) * math.log2(4.0 * inner)
        node_width = d1 * 3 ** (d1 + 2) * S ** (d1 + 1)
    return TreeCounts(required_centers=centers, height=height, leaves=leaves,
                      node_bound=node_bound, node_depth=node_depth,
                      node_width=node_width)


# -- node compression -----------------------------------------------------------


def compress_nodes(tree: RoutingTree, mlp_spec_rule, budget: TrainBudget,
                   audit_tol: float = np.inf) -> list[FitResult]:
    """Fit a ReLU MLP to every node center; attach nets and sup errors.

    ``mlp_spec_rule`` is an MlpSpec or a callable GridFunction -> MlpSpec.
    Nodes whose achieved sup error exceeds ``audit_tol`` are flagged by a
    RuntimeWarning-style note in the returned results (callers decide).
    """
    results = []
    job = 0
    for level in tree.levels:
        for node in level:
            spec = mlp_spec_rule(node.center) if callable(mlp_spec_rule) \
                else mlp_spec_rule
            fit = fit_function(node.center, spec,
                               TrainBudget(epochs=budget.epochs,
                                           learning_rate=budget.learning_rate,
                                           seed=budget.seed + job))
            node.mlp = fit.mlp
            node.mlp_sup_error = fit.sup_error
            results.append(fit)
            job += 1
    bad = [r for r in results if r.sup_error > audit_tol]
    if bad:
        import warnings
        warnings.warn(f"{len(bad)} node fits exceed the audit tolerance "
                      f"{audit_tol}", RuntimeWarning, stacklevel=2)
    return results


# -- serialization ---------------------------------------------------------------


def _write_mlp(fh, mlp: Mlp):
    widths = mlp.spec.widths
    fh.write(struct.pack("<2I", len(widths), 0 if mlp.spec.activation == "relu" else 1))
    fh.write(struct.pack(f"<{len(widths)}I", *widths))
    for p in mlp.parameters():
        fh.write(np.ascontiguousarray(p, dtype="<f8").tobytes())


def _read_mlp(fh) -> Mlp:
    nw, act = struct.unpack("<2I", fh.read(8))
    widths = struct.unpack(f"<{nw}I", fh.read(4 * nw))
    spec = MlpSpec(widths=tuple(widths), activation="relu" if act == 0 else "tanh")
    weights, biases = [], []
    for j in range(spec.depth):
        shape = (widths[j + 1], widths[j])
        weights.append(np.frombuffer(fh.read(8 * shape[0] * shape[1]),
                                     dtype="<f8").reshape(shape).copy())
    for j in range(spec.depth):
        biases.append(np.frombuffer(fh.read(8 * widths[j + 1]), dtype="<f8").copy())
    shift = np.frombuffer(fh.read(8 * widths[-1]), dtype="<f8").copy()
    return Mlp(spec, weights, biases, shift)


def write_tree(path, tree: RoutingTree) -> None:
    g = tree.grid
    header = (f"valency={tree.spec.valency} height={tree.spec.height} "
              f"target_radius={tree.spec.target_radius!r} dim={g.dim} m={g.m} "
              f"channels={g.channels} levels={len(tree.levels)} "
              f"counts={','.join(str(len(l)) for l in tree.levels)} "
              f"cloud={len(tree.cloud)}").encode()
    with open(path, "wb") as fh:
        fh.write(MAGIC_TREE)
        fh.write(struct.pack("<2I", 1, len(header)))
        fh.write(header)
        for level in tree.levels:
            for node in level:
                fh.write(struct.pack("<i", -1 if node.parent is None else node.parent))
                fh.write(struct.pack("<i", node.sample_index))
                fh.write(node.center.values.astype("<f8").tobytes())
                if node.mlp is None:
                    fh.write(struct.pack("<B", 0))
                else:
                    fh.write(struct.pack("<B", 1))
                    fh.write(struct.pack("<d", node.mlp_sup_error or np.nan))
                    _write_mlp(fh, node.mlp)
        for f in tree.cloud:
            fh.write(f.values.astype("<f8").tobytes())


def read_tree(path) -> RoutingTree:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC_TREE:
            raise ValueError(f"bad magic {magic!r}, expected {MAGIC_TREE!r}")
        version, hlen = struct.unpack("<2I", fh.read(8))
        if version != 1:
            raise ValueError(f"unsupported tree version {version}")
        fields = dict(kv.split("=") for kv in fh.read(hlen).decode().split())
        grid = GridSpec(dim=int(fields["dim"]), m=int(fields["m"]),
                        channels=int(fields["channels"]))
        spec = TreeSpec(valency=int(fields["valency"]),
                        height=int(fields["height"]),
                        target_radius=float(fields["target_radius"]))
        counts = [int(x) for x in fields["counts"].split(",")]
        levels = []
        for count in counts:
            nodes = []
            for _ in range(count):
                parent, sample_index = struct.unpack("<2i", fh.read(8))
                vals = np.frombuffer(fh.read(8 * grid.size), dtype="<f8")
                node = TreeNode(center=GridFunction(grid, vals),
                                sample_index=sample_index,
                                parent=None if parent < 0 else parent)
                has_mlp, = struct.unpack("<B", fh.read(1))
                if has_mlp:
                    node.mlp_sup_error, = struct.unpack("<d", fh.read(8))
                    node.mlp = _read_mlp(fh)
                nodes.append(node)
            levels.append(nodes)
        cloud = []
        for _ in range(int(fields["cloud"])):
            vals = np.frombuffer(fh.read(8 * grid.size), dtype="<f8")
            cloud.append(GridFunction(grid, vals))
    for t in range(1, len(levels)):
        for j, node in enumerate(levels[t]):
            levels[t - 1][node.parent].children.append(j)
    return RoutingTree(spec, levels, cloud=cloud)
