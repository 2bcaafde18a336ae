"""Command-line entry point.

Subcommands: gen, basis, tree, train, eval, report, compare, budget.
Exit codes: 0 success, 2 configuration error, 3 runtime failure.  The
default output root is ./runs, overridden by the MONO_DATA_DIR variable.
Report-style commands write a PNG figure next to every CSV.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .basis import Fourier, PiecewisePoly, build_basis, read_basis, write_basis
from .budgets import MODULUS_PRESETS, BudgetInputs, budget_tables
from .experiments import CompareRow, median_by_leaves, run_compare
from .gridfn import GridSpec, read_functions, to_csv, write_functions
from .mixture import (assemble, complexity_report, load_model, read_manifest,
                      train_mono)
from .net import TrainBudget
from .operator import NoSpec
from .tasks import RobinConfig, TaskSpec, make_dataset
from .tree import (TreeSpec, audit_covering, audit_kmeans_recursion,
                   build_tree, read_tree, write_tree)


class ConfigError(ValueError):
    pass


def data_root() -> Path:
    return Path(os.environ.get("MONO_DATA_DIR", "runs"))


# -- run configuration (plain key=value text) -----------------------------------

RUN_CONFIG_KEYS = {
    "task": str, "grid_dim": int, "grid_m": int,
    "basis_family": str, "basis_n": int, "basis_p": int, "basis_levels": int,
    "sample_basis_n": int, "smoothness": float, "radius": float,
    "decay_margin": float,
    "tree_valency": int, "tree_height": int, "tree_delta": float,
    "rank": int, "width": int, "depth": int, "bias_depth": int,
    "bias_width": int, "head": str,
    "train_count": int, "test_count": int,
    "epochs": int, "learning_rate": float, "lr_decay": float,
    "restarts": int, "seed": int,
    "out_dir": str,
}

RUN_CONFIG_DEFAULTS = {
    "task": "square", "grid_dim": 1, "grid_m": 257,
    "basis_family": "fourier", "basis_n": 8, "basis_p": 1, "basis_levels": 3,
    "sample_basis_n": 64, "smoothness": 2.0, "radius": 1.0,
    "decay_margin": 0.25,
    "tree_valency": 4, "tree_height": 1, "tree_delta": 1.0,
    "rank": 8, "width": 16, "depth": 2, "bias_depth": 2, "bias_width": 4,
    "head": "squashed",
    "train_count": 512, "test_count": 128,
    "epochs": 500, "learning_rate": 1e-2, "lr_decay": 1.0, "restarts": 3,
    "seed": 0,
    "out_dir": "",
}


def parse_run_config(path) -> dict:
    values = dict(RUN_CONFIG_DEFAULTS)
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, raw = (part.strip() for part in line.split("=", 1))
            if key not in RUN_CONFIG_KEYS:
                raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
            try:
                values[key] = RUN_CONFIG_KEYS[key](raw)
            except ValueError as exc:
                raise ConfigError(f"{path}:{lineno}: bad value for {key}: "
                                  f"{exc}") from exc
    return values


def write_resolved_config(path, values: dict) -> None:
    with open(path, "w") as fh:
        for key in sorted(values):
            fh.write(f"{key}={values[key]}\n")


def _basis_from_config(cfg: dict, size: int):
    grid = GridSpec(cfg["grid_dim"], cfg["grid_m"], 1)
    if cfg["basis_family"] == "fourier":
        family = Fourier()
    elif cfg["basis_family"] == "piecewise":
        family = PiecewisePoly(max_degree=cfg["basis_p"],
                               levels=cfg["basis_levels"])
    else:
        raise ConfigError(f"unknown basis family {cfg['basis_family']!r}")
    return build_basis(grid, family, size)


def _task_spec(cfg: dict, count: int, seed: int) -> TaskSpec:
    kind = {"robin": "robin_inverse"}.get(cfg["task"], cfg["task"])
    return TaskSpec(kind=kind, grid=GridSpec(cfg["grid_dim"], cfg["grid_m"], 1),
                    count=count, smoothness=cfg["smoothness"],
                    radius=cfg["radius"], decay_margin=cfg["decay_margin"],
                    seed=seed, sample_basis_size=cfg["sample_basis_n"])


# -- subcommands -----------------------------------------------------------------


def cmd_gen(args) -> int:
    out = Path(args.out) if args.out else data_root() / f"{args.task}_data"
    out.mkdir(parents=True, exist_ok=True)
    kind = {"robin": "robin_inverse"}.get(args.task, args.task)
    grid = GridSpec(args.dim, args.n, 1)
    spec = TaskSpec(kind=kind, grid=grid, count=args.count, seed=args.seed,
                    smoothness=args.smoothness, radius=args.radius)
    pairs = make_dataset(spec)
    write_functions(out / "inputs.bin", [u for u, _ in pairs])
    write_functions(out / "outputs.bin", [v for _, v in pairs])
    manifest = {
        "task": kind, "count": args.count, "seed": args.seed,
        "dim": args.dim, "m": args.n, "smoothness": args.smoothness,
        "radius": args.radius,
        "sampler": "gaussian-coefficients, exact radius rescale",
    }
    if kind == "robin_inverse":
        cfg = RobinConfig(n=args.n)
        manifest.update(q_floor=cfg.q_floor, q_reference=cfg.q_reference,
                        top_flux=cfg.top_flux,
                        geometry="unit square, bottom-edge coefficient, "
                                 "top-edge trace",
                        perturbation_scale=0.2)
    with open(out / "manifest.txt", "w") as fh:
        for key in sorted(manifest):
            fh.write(f"{key}={manifest[key]}\n")
    if args.csv:
        to_csv(out / "inputs.csv", [u for u, _ in pairs])
        to_csv(out / "outputs.csv", [v for _, v in pairs])
    print(f"wrote {len(pairs)} pairs to {out}")
    return 0


def cmd_basis(args) -> int:
    if args.action == "build":
        grid = GridSpec(args.dim, args.m, 1)
        family = Fourier() if args.family == "fourier" else \
            PiecewisePoly(max_degree=args.p, levels=args.levels)
        basis = build_basis(grid, family, args.n)
        write_basis(args.out, basis)
        print(f"wrote basis ({args.family}, n={args.n}, gram deviation "
              f"{basis.gram_deviation():.2e}) to {args.out}")
        return 0
    basis = read_basis(args.file)
    functions = [basis.element(i) for i in range(basis.size)]
    to_csv(args.csv, functions)
    print(f"dumped {basis.size} tabulated functions to {args.csv}")
    return 0


def cmd_tree(args) -> int:
    if args.action == "build":
        samples = read_functions(args.data)
        spec = TreeSpec(valency=args.valency, height=args.height,
                        target_radius=args.delta)
        tree = build_tree(samples, spec, seed=args.seed)
        write_tree(args.out, tree)
        print(f"wrote tree ({len(tree.leaves)} leaves) to {args.out}")
        return 0
    tree = read_tree(args.tree)
    test_set = read_functions(args.data) if args.data else tree.cloud
    covering = audit_covering(tree, test_set)
    slack = audit_kmeans_recursion(tree, trials=args.trials, seed=args.seed)
    lines = ["metric,level,value",
             f"covering_radius,,{covering.radius:.6e}",
             f"target_radius,,{covering.target_radius:.6e}",
             f"implied_constant,,{covering.implied_constant:.6e}"]
    for row in slack:
        lines.append(f"kmeans_lhs,{row.level},{row.lhs:.6e}")
        lines.append(f"kmeans_min,{row.level},{row.exact_min:.6e}")
        lines.append(f"kmeans_slack,{row.level},{row.slack:.6e}")
        lines.append(f"kmeans_satisfied,{row.level},{int(row.satisfied)}")
    text = "\n".join(lines)
    if args.out:
        Path(args.out).write_text(text + "\n")
        from .plots import tree_audit_figure
        tree_audit_figure(covering, slack,
                          Path(args.out).with_suffix(".png"))
        print(f"wrote audit to {args.out}")
    else:
        print(text)
    return 0


def cmd_train(args) -> int:
    cfg = parse_run_config(args.config)
    out = Path(cfg["out_dir"]) if cfg["out_dir"] else data_root() / "model"
    out.mkdir(parents=True, exist_ok=True)
    train_pairs = make_dataset(_task_spec(cfg, cfg["train_count"],
                                          seed=cfg["seed"]))
    test_pairs = make_dataset(_task_spec(cfg, cfg["test_count"],
                                         seed=cfg["seed"] + 500_000))
    in_grid = train_pairs[0][0].spec
    out_grid = train_pairs[0][1].spec
    in_basis = build_basis(GridSpec(in_grid.dim, in_grid.m, 1),
                           Fourier() if cfg["basis_family"] == "fourier" else
                           PiecewisePoly(cfg["basis_p"], cfg["basis_levels"]),
                           cfg["basis_n"])
    out_basis = build_basis(GridSpec(out_grid.dim, out_grid.m, 1),
                            Fourier() if cfg["basis_family"] == "fourier" else
                            PiecewisePoly(cfg["basis_p"], cfg["basis_levels"]),
                            cfg["basis_n"])
    tree = build_tree([u for u, _ in train_pairs],
                      TreeSpec(valency=cfg["tree_valency"],
                               height=cfg["tree_height"],
                               target_radius=cfg["tree_delta"]),
                      seed=cfg["seed"])
    expert = NoSpec(rank=cfg["rank"], width=cfg["width"], depth=cfg["depth"],
                    bias_depth=cfg["bias_depth"], bias_width=cfg["bias_width"],
                    head=cfg["head"])
    model = assemble(tree, expert, out, in_basis, out_basis, seed=cfg["seed"],
                     metadata={"task": cfg["task"]})
    budget = TrainBudget(epochs=cfg["epochs"],
                         learning_rate=cfg["learning_rate"],
                         seed=cfg["seed"], lr_decay=cfg["lr_decay"],
                         restarts=cfg["restarts"])
    records = train_mono(model, train_pairs, budget)
    from .experiments import dataset_rel_error
    train_err = dataset_rel_error(model, train_pairs)
    test_err = dataset_rel_error(model, test_pairs)
    write_resolved_config(out / "config.resolved", cfg)
    with open(out / "training.csv", "w") as fh:
        fh.write("leaf,count,final_loss,trained\n")
        for r in records:
            fh.write(f"{r.leaf},{r.count},{r.final_loss:.6e},{int(r.trained)}\n")
        fh.write(f"# train_rel_err={train_err:.6e} test_rel_err={test_err:.6e}\n")
    print(f"trained {sum(r.trained for r in records)}/{len(records)} experts; "
          f"train {train_err:.4f}, test {test_err:.4f}; model at {out}")
    return 0


def cmd_eval(args) -> int:
    model = load_model(args.model)
    inputs = read_functions(Path(args.data) / "inputs.bin")
    targets = read_functions(Path(args.data) / "outputs.bin")
    from .experiments import dataset_rel_error
    err = dataset_rel_error(model, list(zip(inputs, targets)))
    out = Path(args.out) if args.out else Path(args.model) / "eval.csv"
    out.write_text(f"metric,value\nrel_l2_error,{err:.6e}\ncount,{len(inputs)}\n")
    print(f"relative L2 error {err:.6f} over {len(inputs)} pairs -> {out}")
    return 0


def cmd_report(args) -> int:
    model = load_model(args.model)
    report = complexity_report(model)
    out = Path(args.out) if args.out else Path(args.model) / "report.csv"
    out.write_text("metric,value\n"
                   f"active,{report.active}\n"
                   f"total,{report.total}\n"
                   f"routing,{report.routing}\n"
                   f"peak_loaded,{report.peak_loaded}\n"
                   f"leaves,{model.leaf_count}\n")
    from .plots import report_figure
    report_figure(report, out.with_suffix(".png"))
    print(out.read_text().strip())
    return 0


def cmd_compare(args) -> int:
    cfg = dict(RUN_CONFIG_DEFAULTS)
    cfg.update(task=args.task, grid_m=args.m, epochs=args.epochs,
               learning_rate=args.lr)
    leaves_list = [int(x) for x in args.leaves.split(",")]
    seeds = list(range(args.seeds))
    expert = NoSpec(rank=args.rank, width=args.width, depth=args.depth,
                    bias_depth=cfg["bias_depth"], bias_width=cfg["bias_width"])
    in_basis = _basis_from_config(cfg, expert.rank)
    out_basis = in_basis

    def make_pairs(seed):
        train = make_dataset(_task_spec(cfg, args.train_count,
                                        seed=1_000_000 * seed))
        test = make_dataset(_task_spec(cfg, args.test_count,
                                       seed=1_000_000 * seed + 500_000))
        return train, test

    budget = TrainBudget(epochs=args.epochs, learning_rate=args.lr,
                         lr_decay=cfg["lr_decay"], restarts=args.restarts)
    out = Path(args.out) if args.out else data_root() / "compare"
    out.mkdir(parents=True, exist_ok=True)
    rows = run_compare(make_pairs, leaves_list, seeds, expert, in_basis,
                       out_basis, budget, out_root=out / "models")
    csv_path = out / "compare.csv"
    with open(csv_path, "w") as fh:
        fh.write(CompareRow.header() + "\n")
        for row in rows:
            fh.write(row.as_csv() + "\n")
    from .plots import compare_figure
    compare_figure(rows, csv_path.with_suffix(".png"))
    medians = median_by_leaves(rows)
    print(f"wrote {len(rows)} rows to {csv_path}")
    for leaves in sorted(medians):
        print(f"median test error @ {leaves} leaves: {medians[leaves]:.4f}")
    return 0


def cmd_budget(args) -> int:
    if args.omega not in MODULUS_PRESETS:
        raise ConfigError(f"unknown omega preset {args.omega!r}; choose from "
                          f"{sorted(MODULUS_PRESETS)}")
    modulus = MODULUS_PRESETS[args.omega]() if args.omega == "lipschitz" else \
        MODULUS_PRESETS[args.omega](args.c0, args.c1)
    try:
        eps_values = [float(x) for x in args.eps.split(",")]
    except ValueError as exc:
        raise ConfigError(f"bad --eps list: {exc}") from exc
    reports = []
    for eps in eps_values:
        inputs = BudgetInputs(epsilon=eps, modulus=modulus, d1=args.d1,
                              d2=args.d2, s1=args.s1, s2=args.s2,
                              diam=args.diam, valency=args.valency)
        reports.append(budget_tables(inputs))
    names = [e.name for e in reports[0].single], \
        [e.name for e in reports[0].distributed]
    out = Path(args.out) if args.out else data_root() / "budget"
    out.mkdir(parents=True, exist_ok=True)
    csv_path = out / "budget.csv"
    with open(csv_path, "w") as fh:
        cols = ["eps", "t"] + [f"single_{n}" for n in names[0]] \
            + [f"mixture_{n}" for n in names[1]]
        fh.write(",".join(cols) + "\n")
        for eps, rep in zip(eps_values, reports):
            vals = [f"{eps:g}", f"{-np.log10(eps):g}"]
            for entry in rep.single + rep.distributed:
                vals.append(f"{entry.value:.6g}")
            fh.write(",".join(vals) + "\n")
    with open(out / "budget_formulas.txt", "w") as fh:
        for entry in reports[0].single:
            fh.write(f"single_{entry.name}"
                     f"{' (exact)' if entry.exact else ' (order)'}: "
                     f"{entry.formula}\n")
        for entry in reports[0].distributed:
            fh.write(f"mixture_{entry.name}"
                     f"{' (exact)' if entry.exact else ' (order)'}: "
                     f"{entry.formula}\n")
    from .plots import budget_figure
    budget_figure(eps_values, reports, csv_path.with_suffix(".png"))
    print(csv_path.read_text().strip())
    return 0


# -- parser -----------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bench",
        description="Routed mixtures of finite-rank operators: data, trees, "
                    "training, audits and budget tables.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="generate a benchmark dataset")
    p.add_argument("--task", required=True,
                   choices=["square", "antiderivative", "nemytskii", "robin"])
    p.add_argument("--n", type=int, default=257, help="grid points per axis")
    p.add_argument("--dim", type=int, default=1)
    p.add_argument("--count", type=int, default=128)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--smoothness", type=float, default=2.0)
    p.add_argument("--radius", type=float, default=1.0)
    p.add_argument("--csv", action="store_true")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_gen)

    p = sub.add_parser("basis", help="build or dump a basis cache")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("build")
    b.add_argument("--family", choices=["fourier", "piecewise"],
                   default="fourier")
    b.add_argument("--dim", type=int, default=1)
    b.add_argument("--m", type=int, default=257)
    b.add_argument("--n", type=int, default=8)
    b.add_argument("--p", type=int, default=1)
    b.add_argument("--levels", type=int, default=3)
    b.add_argument("--out", required=True)
    d = ps.add_parser("dump")
    d.add_argument("file")
    d.add_argument("--csv", required=True)
    p.set_defaults(fn=cmd_basis)

    p = sub.add_parser("tree", help="build or audit a routing tree")
    ps = p.add_subparsers(dest="action", required=True)
    b = ps.add_parser("build")
    b.add_argument("--data", required=True, help="MFN1 container of samples")
    b.add_argument("--valency", type=int, default=2)
    b.add_argument("--height", type=int, default=2)
    b.add_argument("--delta", type=float, default=1.0)
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--out", required=True)
    a = ps.add_parser("audit")
    a.add_argument("--tree", required=True)
    a.add_argument("--data", default=None)
    a.add_argument("--trials", type=int, default=64)
    a.add_argument("--seed", type=int, default=0)
    a.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_tree)

    p = sub.add_parser("train", help="run the full training pipeline")
    p.add_argument("--config", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a model on a dataset directory")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("report", help="complexity ledger of a model")
    p.add_argument("--model", required=True)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_report)

    p = sub.add_parser("compare", help="single operator vs routed mixture")
    p.add_argument("--task", default="square",
                   choices=["square", "antiderivative", "nemytskii"])
    p.add_argument("--leaves", default="1,4")
    p.add_argument("--seeds", type=int, default=5)
    p.add_argument("--m", type=int, default=257)
    p.add_argument("--train-count", type=int, default=512)
    p.add_argument("--test-count", type=int, default=128)
    p.add_argument("--rank", type=int, default=8)
    p.add_argument("--width", type=int, default=16)
    p.add_argument("--depth", type=int, default=2)
    p.add_argument("--epochs", type=int, default=500)
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_compare)

    p = sub.add_parser("budget", help="closed-form complexity tables")
    p.add_argument("--omega", default="lipschitz")
    p.add_argument("--eps", default="1e-1,1e-2,1e-3")
    p.add_argument("--d1", type=int, default=1)
    p.add_argument("--d2", type=int, default=1)
    p.add_argument("--s1", type=float, default=2.0)
    p.add_argument("--s2", type=float, default=2.0)
    p.add_argument("--diam", type=float, default=1.0)
    p.add_argument("--valency", type=int, default=2)
    p.add_argument("--c0", type=float, default=1.0)
    p.add_argument("--c1", type=float, default=1.0)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_budget)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else 0
    try:
        return args.fn(args)
    except (ConfigError, FileNotFoundError, ValueError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # runtime failure
        print(f"error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
