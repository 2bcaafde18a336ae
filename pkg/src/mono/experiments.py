"""Reusable experiment drivers behind the CLI's train/eval/compare paths."""

from __future__ import annotations

import tempfile
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

from .basis import BasisSet, Fourier, build_basis
from .gridfn import GridFunction, GridSpec
from .mixture import (MoNoModel, assemble, complexity_report, realize_batch,
                      train_mono)
from .net import TrainBudget
from .operator import NoSpec
from .tree import RoutingTree, TreeSpec, build_tree


def dataset_rel_error(model: MoNoModel, pairs) -> float:
    """Aggregate relative L^2 error of the routed model over a dataset."""
    inputs = [u for u, _ in pairs]
    preds = realize_batch(model, inputs)
    wq = pairs[0][1].spec.quad_weights()
    err = ref = 0.0
    for pred, (_, target) in zip(preds, pairs):
        diff = pred.field - target.field
        err += float(np.einsum("pc,p->", diff * diff, wq))
        ref += float(np.einsum("pc,p->", target.field * target.field, wq))
    return float(np.sqrt(err / ref)) if ref > 0 else float(np.sqrt(err))


def leaf_tree(train_inputs, leaves: int, seed: int) -> RoutingTree:
    """A routing tree with the requested leaf count over the train inputs.

    leaves == 1 gives the trivial single-node tree (classical operator);
    otherwise a height-1 tree with valency == leaves.
    """
    if leaves == 1:
        return build_tree(train_inputs, TreeSpec(valency=2, height=0), seed=seed)
    return build_tree(train_inputs, TreeSpec(valency=leaves, height=1), seed=seed)


@dataclass
class CompareRow:
    seed: int
    leaves: int
    active_params: int
    total_params: int
    routing_queries: int
    peak_loaded: int
    train_err: float
    test_err: float

    def as_csv(self) -> str:
        return (f"{self.seed},{self.leaves},{self.active_params},"
                f"{self.total_params},{self.routing_queries},{self.peak_loaded},"
                f"{self.train_err:.6e},{self.test_err:.6e}")

    @staticmethod
    def header() -> str:
        return ("seed,leaves,active_params,total_params,routing_queries,"
                "peak_loaded,train_err,test_err")


def fit_and_score(train_pairs, test_pairs, leaves: int, expert: NoSpec,
                  in_basis: BasisSet, out_basis: BasisSet,
                  budget: TrainBudget, seed: int,
                  store_dir=None) -> CompareRow:
    if store_dir is None:
        store_dir = tempfile.mkdtemp(prefix=f"model_l{leaves}_s{seed}_")
    tree = leaf_tree([u for u, _ in train_pairs], leaves, seed=seed)
    model = assemble(tree, expert, store_dir, in_basis, out_basis, seed=seed)
    train_mono(model, train_pairs, budget)
    train_err = dataset_rel_error(model, train_pairs)
    test_err = dataset_rel_error(model, test_pairs)
    report = complexity_report(model)
    return CompareRow(seed=seed, leaves=leaves, active_params=report.active,
                      total_params=report.total, routing_queries=report.routing,
                      peak_loaded=report.peak_loaded, train_err=train_err,
                      test_err=test_err)


def run_compare(make_pairs, leaves_list, seeds, expert: NoSpec,
                in_basis: BasisSet, out_basis: BasisSet, budget: TrainBudget,
                out_root=None) -> list[CompareRow]:
    """Matched-active comparison: same expert spec and per-expert budget at
    every leaf count, over several seeds.

    ``make_pairs(seed)`` must return (train_pairs, test_pairs).
    """
    rows = []
    for seed in seeds:
        train_pairs, test_pairs = make_pairs(seed)
        for leaves in leaves_list:
            store = None if out_root is None else \
                Path(out_root) / f"seed{seed}_leaves{leaves}"
            rows.append(fit_and_score(train_pairs, test_pairs, leaves, expert,
                                      in_basis, out_basis, budget, seed,
                                      store_dir=store))
    return rows


def median_by_leaves(rows: list[CompareRow]) -> dict[int, float]:
    out: dict[int, list] = {}
    for row in rows:
        out.setdefault(row.leaves, []).append(row.test_err)
    return {leaves: float(np.median(errs)) for leaves, errs in out.items()}
