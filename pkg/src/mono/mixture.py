"""Routing tree + one expert per leaf, with sharded load-on-demand storage.

Model directory layout::

    model/tree.bin            routing tree ("MONOTREE")
    model/experts/leaf_<k>.bin  one shard per leaf ("MONOEXP1")
    model/in_basis.bin, model/out_basis.bin
    model/manifest.txt        plain text, one key=value per line

The shard store is instrumented: every load/unload updates a resident
scalar counter, so the peak is a measurement rather than an inference.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .basis import BasisSet, read_basis, write_basis
from .gridfn import GridFunction, GridSpec
from .net import TrainBudget
from .operator import (NeuralOperator, NoSpec, init_operator, param_count_no,
                       read_expert, train_expert, write_expert)
from .tree import RoutingTree, read_tree, route, write_tree


class ShardIntegrityError(RuntimeError):
    pass


class ShardStore:
    """Loads expert shards one at a time and accounts resident scalars."""

    def __init__(self, directory: Path, in_basis: BasisSet, out_basis: BasisSet):
        self.directory = Path(directory)
        self.in_basis = in_basis
        self.out_basis = out_basis
        self.resident = 0
        self.peak = 0

    def path(self, leaf: int) -> Path:
        return self.directory / f"leaf_{leaf}.bin"

    def load(self, leaf: int) -> NeuralOperator:
        path = self.path(leaf)
        if not path.exists():
            raise ShardIntegrityError(f"missing shard for leaf {leaf}: {path}")
        op = read_expert(path, self.in_basis, self.out_basis)
        self.resident += op.stored_scalar_count()
        self.peak = max(self.peak, self.resident)
        return op

    def unload(self, op: NeuralOperator) -> None:
        self.resident -= op.stored_scalar_count()

    def save(self, leaf: int, op: NeuralOperator) -> None:
        write_expert(self.path(leaf), op)


@dataclass
class ComplexityReport:
    active: int
    total: int
    routing: int
    peak_loaded: int

    def __post_init__(self):
        assert self.active <= self.total


@dataclass
class MoNoModel:
    tree: RoutingTree
    expert_spec: NoSpec
    store: ShardStore
    metadata: dict = field(default_factory=dict)

    @property
    def leaf_count(self) -> int:
        return len(self.tree.leaves)

    def expert_paths(self) -> list[Path]:
        return [self.store.path(k) for k in range(self.leaf_count)]


def _write_manifest(path: Path, entries: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(entries):
            fh.write(f"{key}={entries[key]}\n")


def read_manifest(path: Path) -> dict:
    entries = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if line:
                key, value = line.split("=", 1)
                entries[key] = value
    return entries


def assemble(tree: RoutingTree, expert_template: NoSpec, store_dir,
             in_basis: BasisSet, out_basis: BasisSet, seed: int = 0,
             metadata: dict | None = None) -> MoNoModel:
    """Instantiate one freshly initialized expert per leaf, persisted to shards.

    Expert k is seeded with seed + k, so re-assembly with the same seeds
    reproduces identical shard bytes.
    """
    store_dir = Path(store_dir)
    experts_dir = store_dir / "experts"
    experts_dir.mkdir(parents=True, exist_ok=True)
    store = ShardStore(experts_dir, in_basis, out_basis)
    for k in range(len(tree.leaves)):
        op = init_operator(expert_template, in_basis, out_basis, seed=seed + k)
        store.save(k, op)
    write_tree(store_dir / "tree.bin", tree)
    write_basis(store_dir / "in_basis.bin", in_basis)
    write_basis(store_dir / "out_basis.bin", out_basis)
    meta = dict(metadata or {})
    meta.update(seed=seed, leaves=len(tree.leaves),
                rank=expert_template.rank, width=expert_template.width,
                depth=expert_template.depth,
                bias_depth=expert_template.bias_depth,
                bias_width=expert_template.bias_width,
                d_in=expert_template.d_in, d_out=expert_template.d_out,
                head=expert_template.head,
                tree_valency=tree.spec.valency, tree_height=tree.spec.height,
                grid_dim=tree.grid.dim, grid_m=tree.grid.m)
    _write_manifest(store_dir / "manifest.txt", meta)
    return MoNoModel(tree=tree, expert_spec=expert_template, store=store,
                     metadata=meta)


def load_model(store_dir) -> MoNoModel:
    store_dir = Path(store_dir)
    tree = read_tree(store_dir / "tree.bin")
    in_basis = read_basis(store_dir / "in_basis.bin")
    out_basis = read_basis(store_dir / "out_basis.bin")
    meta = read_manifest(store_dir / "manifest.txt")
    spec = NoSpec(rank=int(meta["rank"]), width=int(meta["width"]),
                  depth=int(meta["depth"]), bias_depth=int(meta["bias_depth"]),
                  bias_width=int(meta["bias_width"]), d_in=int(meta["d_in"]),
                  d_out=int(meta["d_out"]), head=meta["head"])
    store = ShardStore(store_dir / "experts", in_basis, out_basis)
    return MoNoModel(tree=tree, expert_spec=spec, store=store, metadata=meta)


def realize(model: MoNoModel, u: GridFunction) -> GridFunction:
    """Route, load exactly that leaf's shard, forward, unload."""
    leaf = route(model.tree, u).leaf
    op = model.store.load(leaf)
    try:
        out = op.forward(u)
    finally:
        model.store.unload(op)
    return out


def realize_batch(model: MoNoModel, inputs: list) -> list:
    """Route each input, then forward one leaf's batch at a time."""
    routes = [route(model.tree, u).leaf for u in inputs]
    outputs: list = [None] * len(inputs)
    for leaf in sorted(set(routes)):
        members = [i for i, r in enumerate(routes) if r == leaf]
        op = model.store.load(leaf)
        try:
            batch = np.stack([inputs[i].field for i in members])
            preds = op.forward_batch(batch)
        finally:
            model.store.unload(op)
        out_spec = GridSpec(op.out_basis.spec.dim, op.out_basis.spec.m,
                            model.expert_spec.d_out)
        for j, i in enumerate(members):
            outputs[i] = GridFunction.from_field(out_spec, preds[j])
    return outputs


@dataclass
class LeafTrainRecord:
    leaf: int
    count: int
    final_loss: float
    trained: bool


class RoutingDegeneracyError(RuntimeError):
    pass


def train_mono(model: MoNoModel, dataset, budget: TrainBudget) -> list[LeafTrainRecord]:
    """Partition the dataset by routed leaf and train each expert on its part.

    Empty partitions are left at initialization and flagged; partitions are
    trained independently (one shard owned at a time) and reproducibly.
    """
    partitions: dict[int, list] = {k: [] for k in range(model.leaf_count)}
    for u, v in dataset:
        partitions[route(model.tree, u).leaf].append((u, v))
    if all(not part for part in partitions.values()):
        raise RoutingDegeneracyError("every leaf partition is empty")
    records = []
    for leaf in range(model.leaf_count):
        part = partitions[leaf]
        if not part:
            records.append(LeafTrainRecord(leaf=leaf, count=0,
                                           final_loss=float("nan"),
                                           trained=False))
            continue
        op = model.store.load(leaf)
        try:
            # recentering transform: the expert sees its cell shifted to the
            # leaf center and its targets shifted by their mean
            center = model.tree.leaves[leaf].center
            out_mean = np.mean([v.field for _, v in part], axis=0)
            op = op.with_shifts(center.field, out_mean)
            result = train_expert(op, part, budget)
            model.store.save(leaf, result.operator)
        finally:
            model.store.unload(op)
        records.append(LeafTrainRecord(leaf=leaf, count=len(part),
                                       final_loss=result.final_loss,
                                       trained=True))
    empty = [r.leaf for r in records if not r.trained]
    if empty:
        import warnings
        warnings.warn(f"leaves {empty} received no routed samples and keep "
                      f"their initialization", RuntimeWarning, stacklevel=2)
    return records


def complexity_report(model: MoNoModel) -> ComplexityReport:
    """Active = max per-expert stored scalars, total = sum over leaves,
    routing = nodes visited per query, peak from the instrumented loader."""
    counts = []
    for leaf in range(model.leaf_count):
        op = model.store.load(leaf)
        counts.append(op.stored_scalar_count())
        model.store.unload(op)
    return ComplexityReport(active=max(counts), total=sum(counts),
                            routing=len(model.tree.levels),
                            peak_loaded=model.store.peak)


def declared_complexity(model: MoNoModel) -> dict:
    """Formula-side counts for cross-checking the measured ledger."""
    bound = param_count_no(model.expert_spec)
    return dict(per_expert_bound=bound,
                total_bound=bound * model.leaf_count,
                routing=len(model.tree.levels))
