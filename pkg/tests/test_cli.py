"""End-to-end exercises of the command-line surface."""

import os
from pathlib import Path

import numpy as np
import pytest

from mono.cli import main, parse_run_config
from mono.gridfn import read_functions


def run(args, tmp_path, monkeypatch):
    monkeypatch.setenv("MONO_DATA_DIR", str(tmp_path / "runs"))
    return main(args)


class TestGen:
    def test_square_dataset_files(self, tmp_path, monkeypatch):
        out = tmp_path / "data"
        code = run(["gen", "--task", "square", "--n", "65", "--count", "4",
                    "--seed", "3", "--out", str(out)], tmp_path, monkeypatch)
        assert code == 0
        inputs = read_functions(out / "inputs.bin")
        outputs = read_functions(out / "outputs.bin")
        assert len(inputs) == len(outputs) == 4
        assert np.allclose(outputs[0].values, inputs[0].values ** 2)
        manifest = (out / "manifest.txt").read_text()
        assert "seed=3" in manifest

    def test_gen_deterministic_bytes(self, tmp_path, monkeypatch):
        for sub in ("a", "b"):
            run(["gen", "--task", "square", "--n", "65", "--count", "3",
                 "--seed", "1", "--out", str(tmp_path / sub)], tmp_path,
                monkeypatch)
        assert (tmp_path / "a" / "inputs.bin").read_bytes() == \
            (tmp_path / "b" / "inputs.bin").read_bytes()

    def test_robin_gen(self, tmp_path, monkeypatch):
        out = tmp_path / "robin"
        code = run(["gen", "--task", "robin", "--n", "17", "--count", "2",
                    "--seed", "7", "--out", str(out)], tmp_path, monkeypatch)
        assert code == 0
        assert "geometry" in (out / "manifest.txt").read_text()


class TestBasisCli:
    def test_build_and_dump(self, tmp_path, monkeypatch):
        path = tmp_path / "basis.bin"
        assert run(["basis", "build", "--family", "fourier", "--m", "65",
                    "--n", "4", "--out", str(path)], tmp_path, monkeypatch) == 0
        csv = tmp_path / "basis.csv"
        assert run(["basis", "dump", str(path), "--csv", str(csv)],
                   tmp_path, monkeypatch) == 0
        lines = csv.read_text().strip().splitlines()
        assert len(lines) == 1 + 65


class TestTreeCli:
    def test_build_and_audit(self, tmp_path, monkeypatch):
        data = tmp_path / "data"
        run(["gen", "--task", "square", "--n", "65", "--count", "8",
             "--seed", "0", "--out", str(data)], tmp_path, monkeypatch)
        tree_path = tmp_path / "tree.bin"
        assert run(["tree", "build", "--data", str(data / "inputs.bin"),
                    "--valency", "2", "--height", "2", "--out",
                    str(tree_path)], tmp_path, monkeypatch) == 0
        audit = tmp_path / "audit.csv"
        assert run(["tree", "audit", "--tree", str(tree_path), "--out",
                    str(audit)], tmp_path, monkeypatch) == 0
        text = audit.read_text()
        assert "covering_radius" in text and "kmeans_slack" in text
        assert audit.with_suffix(".png").exists()


class TestTrainEvalReport:
    def test_pipeline(self, tmp_path, monkeypatch):
        cfg = tmp_path / "run.cfg"
        out = tmp_path / "model"
        cfg.write_text(
            "task=square\ngrid_m=65\nbasis_n=4\nrank=4\nwidth=4\ndepth=1\n"
            "bias_depth=1\nbias_width=2\ntree_valency=2\ntree_height=1\n"
            f"train_count=16\ntest_count=8\nepochs=10\nseed=0\nout_dir={out}\n")
        assert run(["train", "--config", str(cfg)], tmp_path, monkeypatch) == 0
        assert (out / "config.resolved").exists()
        assert (out / "training.csv").exists()
        assert (out / "manifest.txt").exists()

        data = tmp_path / "eval_data"
        run(["gen", "--task", "square", "--n", "65", "--count", "4",
             "--seed", "5", "--out", str(data)], tmp_path, monkeypatch)
        assert run(["eval", "--model", str(out), "--data", str(data)],
                   tmp_path, monkeypatch) == 0
        assert "rel_l2_error" in (out / "eval.csv").read_text()

        assert run(["report", "--model", str(out)], tmp_path, monkeypatch) == 0
        report = (out / "report.csv").read_text()
        assert "active" in report and "routing" in report
        assert (out / "report.png").exists()

    def test_report_single_leaf_active_equals_total(self, tmp_path,
                                                    monkeypatch):
        cfg = tmp_path / "run.cfg"
        out = tmp_path / "m1"
        cfg.write_text(
            "task=square\ngrid_m=65\nbasis_n=4\nrank=4\nwidth=4\ndepth=0\n"
            "bias_depth=1\nbias_width=2\ntree_valency=2\ntree_height=0\n"
            f"train_count=8\ntest_count=4\nepochs=5\nseed=0\nout_dir={out}\n")
        run(["train", "--config", str(cfg)], tmp_path, monkeypatch)
        run(["report", "--model", str(out)], tmp_path, monkeypatch)
        rows = dict(line.split(",") for line in
                    (out / "report.csv").read_text().strip().splitlines()[1:])
        assert rows["active"] == rows["total"]
        assert rows["routing"] == "1"


class TestConfigHandling:
    def test_unknown_key_rejected(self, tmp_path, monkeypatch):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("task=square\nnonsense_key=1\n")
        assert run(["train", "--config", str(cfg)], tmp_path, monkeypatch) == 2

    def test_bad_value_rejected(self, tmp_path, monkeypatch):
        cfg = tmp_path / "bad.cfg"
        cfg.write_text("grid_m=not_an_int\n")
        assert run(["train", "--config", str(cfg)], tmp_path, monkeypatch) == 2

    def test_comments_and_defaults(self, tmp_path):
        cfg = tmp_path / "ok.cfg"
        cfg.write_text("# comment\ntask=nemytskii\n\nepochs=7\n")
        values = parse_run_config(cfg)
        assert values["task"] == "nemytskii"
        assert values["epochs"] == 7
        assert values["grid_m"] == 257  # default preserved


class TestBudgetCli:
    def test_monotone_rank_column(self, tmp_path, monkeypatch, capsys):
        out = tmp_path / "budget"
        code = run(["budget", "--omega", "lipschitz",
                    "--eps", "1e-1,1e-2,1e-3", "--out", str(out)],
                   tmp_path, monkeypatch)
        assert code == 0
        lines = (out / "budget.csv").read_text().strip().splitlines()
        header = lines[0].split(",")
        rank_col = header.index("single_rank")
        ranks = [float(line.split(",")[rank_col]) for line in lines[1:]]
        assert ranks[0] < ranks[1] < ranks[2]
        assert (out / "budget.png").exists()
        assert (out / "budget_formulas.txt").exists()

    def test_logarithmic_preset(self, tmp_path, monkeypatch):
        out = tmp_path / "budget_log"
        assert run(["budget", "--omega", "logarithmic", "--eps", "1e-1,1e-2",
                    "--out", str(out)], tmp_path, monkeypatch) == 0

    def test_unknown_omega(self, tmp_path, monkeypatch):
        assert run(["budget", "--omega", "mystery"], tmp_path,
                   monkeypatch) == 2


class TestCompareCli:
    def test_tiny_compare_schema(self, tmp_path, monkeypatch):
        out = tmp_path / "cmp"
        code = run(["compare", "--task", "square", "--leaves", "1,2",
                    "--seeds", "1", "--m", "65", "--train-count", "16",
                    "--test-count", "8", "--rank", "4", "--width", "4",
                    "--depth", "1", "--epochs", "8", "--out", str(out)],
                   tmp_path, monkeypatch)
        assert code == 0
        lines = (out / "compare.csv").read_text().strip().splitlines()
        assert lines[0] == ("seed,leaves,active_params,total_params,"
                            "routing_queries,peak_loaded,train_err,test_err")
        assert len(lines) == 3  # one seed, two leaf counts
        assert (out / "compare.png").exists()
