"""Assembly, routed realization, sharded training, the complexity ledger."""

import numpy as np
import pytest

from mono.basis import Fourier, build_basis
from mono.budgets import BudgetInputs, budget_tables, lipschitz_modulus
from mono.gridfn import GridFunction, GridSpec
from mono.mixture import (ShardIntegrityError, assemble, complexity_report,
                          load_model, read_manifest, realize, realize_batch,
                          train_mono)
from mono.net import TrainBudget
from mono.operator import (NoSpec, init_operator, param_count_no, read_expert,
                           train_expert)
from mono.tree import RoutingTree, TreeSpec, build_tree

GRID = GridSpec(1, 65)
SPEC = NoSpec(rank=4, width=4, depth=1, bias_depth=2, bias_width=2)


def _basis():
    return build_basis(GRID, Fourier(), 4)


def _cloud(count, seed=0, scale=1.0):
    basis = _basis()
    rng = np.random.default_rng(seed)
    return [basis.decode(scale * rng.standard_normal(4) * 0.5 ** np.arange(4))
            for _ in range(count)]


def _pairs(count, seed=0):
    return [(u, GridFunction(u.spec, u.values ** 2))
            for u in _cloud(count, seed)]


def _model(tmp_path, leaves=2, seed=0, samples=None):
    basis = _basis()
    samples = samples if samples is not None else _cloud(16, seed=3)
    if leaves == 1:
        tree = RoutingTree.single_node(samples[0])
    else:
        tree = build_tree(samples, TreeSpec(valency=leaves, height=1), seed=seed)
    return assemble(tree, SPEC, tmp_path / "model", basis, basis, seed=seed)


class TestAssemble:
    def test_shard_files_and_totals(self, tmp_path):
        model = _model(tmp_path, leaves=8, samples=_cloud(32, seed=1))
        paths = model.expert_paths()
        assert len(paths) == 8
        assert all(p.exists() for p in paths)
        report = complexity_report(model)
        assert report.total == 8 * report.active

    def test_reassembly_identical_bytes(self, tmp_path):
        samples = _cloud(16, seed=5)
        a = assemble(build_tree(samples, TreeSpec(2, 1), seed=0), SPEC,
                     tmp_path / "a", _basis(), _basis(), seed=7)
        b = assemble(build_tree(samples, TreeSpec(2, 1), seed=0), SPEC,
                     tmp_path / "b", _basis(), _basis(), seed=7)
        for pa, pb in zip(a.expert_paths(), b.expert_paths()):
            assert pa.read_bytes() == pb.read_bytes()
        assert (tmp_path / "a" / "tree.bin").read_bytes() == \
            (tmp_path / "b" / "tree.bin").read_bytes()

    def test_manifest_readable(self, tmp_path):
        model = _model(tmp_path)
        meta = read_manifest(tmp_path / "model" / "manifest.txt")
        assert meta["leaves"] == "2"
        assert meta["rank"] == "4"

    def test_load_model_roundtrip(self, tmp_path):
        model = _model(tmp_path, leaves=2)
        back = load_model(tmp_path / "model")
        assert back.expert_spec == model.expert_spec
        assert back.leaf_count == model.leaf_count


class TestRealize:
    def test_trivial_tree_equals_direct_forward(self, tmp_path):
        model = _model(tmp_path, leaves=1)
        op = model.store.load(0)
        model.store.unload(op)
        for seed in range(50):
            u = _cloud(1, seed=100 + seed)[0]
            direct = op.forward(u)
            routed = realize(model, u)
            assert np.array_equal(direct.values, routed.values)

    def test_peak_counts_one_expert(self, tmp_path):
        samples = [GridFunction.constant(GRID, -1.0),
                   GridFunction.constant(GRID, 1.0)] * 4
        model = _model(tmp_path, leaves=2, samples=samples)
        one = model.store.load(0)
        per_expert = one.stored_scalar_count()
        model.store.unload(one)
        model.store.peak = 0
        realize(model, GridFunction.constant(GRID, -0.9))
        realize(model, GridFunction.constant(GRID, 0.9))
        report = complexity_report(model)
        assert report.peak_loaded == per_expert
        assert report.total == 2 * per_expert

    def test_tie_routes_to_smaller_leaf(self, tmp_path):
        samples = [GridFunction.constant(GRID, -1.0),
                   GridFunction.constant(GRID, 1.0)] * 4
        model = _model(tmp_path, leaves=2, samples=samples)
        routed = realize_batch(model, [GridFunction.constant(GRID, 0.0)])
        op0 = model.store.load(0)
        expected = op0.forward(GridFunction.constant(GRID, 0.0))
        model.store.unload(op0)
        assert np.array_equal(routed[0].values, expected.values)

    def test_missing_shard_names_leaf(self, tmp_path):
        samples = [GridFunction.constant(GRID, -1.0),
                   GridFunction.constant(GRID, 1.0)] * 4
        model = _model(tmp_path, leaves=2, samples=samples)
        model.store.path(1).unlink()
        bad = GridFunction.constant(GRID, 0.9)  # routes to the missing leaf
        with pytest.raises(ShardIntegrityError, match="leaf 1"):
            realize(model, bad)
        with pytest.raises(ShardIntegrityError, match="leaf 1"):
            realize_batch(model, [bad])


class TestTrainMono:
    def test_single_leaf_reduces_to_expert_training(self, tmp_path):
        pairs = _pairs(12, seed=1)
        model = _model(tmp_path, leaves=1, samples=[u for u, _ in pairs])
        budget = TrainBudget(epochs=40, learning_rate=3e-3, seed=0)
        records = train_mono(model, pairs, budget)
        assert len(records) == 1 and records[0].trained

        # manual reference: identical init + identical recentering transform
        ref = init_operator(SPEC, _basis(), _basis(), seed=0)
        center = model.tree.leaves[0].center
        out_mean = np.mean([v.field for _, v in pairs], axis=0)
        ref = ref.with_shifts(center.field, out_mean)
        ref_result = train_expert(ref, pairs, budget)
        trained = model.store.load(0)
        model.store.unload(trained)
        for a, b in zip(trained.parameters(), ref_result.operator.parameters()):
            assert np.array_equal(a, b)
        assert records[0].final_loss == ref_result.final_loss

    def test_deterministic_loss_table(self, tmp_path):
        pairs = _pairs(16, seed=2)
        budget = TrainBudget(epochs=25, learning_rate=3e-3, seed=0)
        tables = []
        for sub in ("m1", "m2"):
            basis = _basis()
            tree = build_tree([u for u, _ in pairs], TreeSpec(2, 1), seed=0)
            model = assemble(tree, SPEC, tmp_path / sub, basis, basis, seed=0)
            records = train_mono(model, pairs, budget)
            tables.append([(r.leaf, r.count, r.final_loss) for r in records])
        assert tables[0] == tables[1]

    def test_empty_partition_flagged(self, tmp_path):
        # far-away second leaf never receives routed data
        samples = [GridFunction.constant(GRID, 0.0),
                   GridFunction.constant(GRID, 50.0)] * 4
        model = _model(tmp_path, leaves=2, samples=samples)
        pairs = [(GridFunction.constant(GRID, 0.1),
                  GridFunction.constant(GRID, 0.01))] * 6
        with pytest.warns(RuntimeWarning, match="no routed samples"):
            records = train_mono(model, pairs,
                                 TrainBudget(epochs=5, learning_rate=1e-3,
                                             seed=0))
        assert [r.trained for r in records] == [True, False]
        assert np.isnan(records[1].final_loss)


class TestComplexityReport:
    def test_single_leaf_active_equals_total(self, tmp_path):
        model = _model(tmp_path, leaves=1)
        report = complexity_report(model)
        assert report.active == report.total
        assert report.routing == 1

    def test_uniform_leaves_total_scales(self, tmp_path):
        model = _model(tmp_path, leaves=4, samples=_cloud(16, seed=9))
        report = complexity_report(model)
        assert report.total == 4 * report.active
        assert report.routing == 2  # root plus leaf level

    def test_declared_bound_dominates_stored(self, tmp_path):
        model = _model(tmp_path, leaves=2)
        report = complexity_report(model)
        assert param_count_no(SPEC) >= report.active

    def test_hand_evaluated_bound(self):
        assert param_count_no(NoSpec(rank=2, width=3, depth=2, bias_depth=1,
                                     bias_width=2)) == 120

    def test_ledger_recomputed_from_files(self, tmp_path):
        model = _model(tmp_path, leaves=2)
        basis = _basis()
        counts = []
        for path in model.expert_paths():
            op = read_expert(path, basis, basis)
            counts.append(op.stored_scalar_count())
        report = complexity_report(model)
        assert report.active == max(counts)
        assert report.total == sum(counts)
        assert report.routing == len(model.tree.levels)


class TestBudgetTables:
    def test_width_formula(self):
        report = budget_tables(BudgetInputs(epsilon=0.1,
                                            modulus=lipschitz_modulus()))
        entries = report.entries()
        rank = entries["single_rank"].value
        assert entries["single_width"].value == rank * 1 + rank * 1 + 2

    def test_rank_cancellation(self):
        # eps = 2^{7/2} with unit diameter makes the first branch exactly 1
        inputs = BudgetInputs(epsilon=2.0 ** 3.5, modulus=lipschitz_modulus())
        from mono.budgets import expert_rank
        first = (inputs.diam * 2.0 ** 3.5 / inputs.epsilon) ** \
            (inputs.d1 / inputs.s1)
        assert first == 1.0
        assert expert_rank(inputs) >= 1

    def test_rank_hand_value_lipschitz(self):
        # s_i = 2 d_i, identity modulus, unit diameter, eps = 0.1:
        # ceil(max{(2^3.5/0.1)^0.5, (8 * 2^1.5/0.1)^0.5}) = ceil(15.042) = 16
        inputs = BudgetInputs(epsilon=0.1, modulus=lipschitz_modulus(),
                              d1=1, d2=1, s1=2.0, s2=2.0)
        from mono.budgets import expert_rank
        assert expert_rank(inputs) == 16

    def test_rank_monotone_in_precision(self):
        from mono.budgets import expert_rank
        ranks = [expert_rank(BudgetInputs(epsilon=e,
                                          modulus=lipschitz_modulus()))
                 for e in (1e-1, 1e-2, 1e-3)]
        assert ranks[0] < ranks[1] < ranks[2]

    def test_entries_labelled(self):
        report = budget_tables(BudgetInputs(epsilon=0.05,
                                            modulus=lipschitz_modulus()))
        entries = report.entries()
        assert entries["single_rank"].exact
        assert not entries["single_depth"].exact
        assert entries["single_depth"].formula
        assert entries["mixture_active"].value > 0
