"""Figure rendering for the report/compare/budget paths.

Figures are companions to the CSV files (same stem, .png), rendered with
the Agg backend so they work headless.  Everything here consumes the CSV
row dictionaries, never internal model state.
"""

from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

FIG_KW = dict(figsize=(6.0, 4.0), dpi=150)


def _finish(fig, path):
    fig.tight_layout()
    fig.savefig(path)
    plt.close(fig)
    return Path(path)


def budget_figure(eps_values, reports, path):
    """Complexity curves versus precision t = -log10(eps)."""
    t = [-np.log10(e) for e in eps_values]
    fig, axes = plt.subplots(1, 3, figsize=(12.0, 4.0), dpi=150)
    entries = [r.entries() for r in reports]

    def series(name):
        return [e[name].log10 for e in entries]

    axes[0].plot(t, series("single_depth"), "o-", color="firebrick",
                 label="single operator")
    axes[0].plot(t, series("mixture_depth"), "s--", color="steelblue",
                 label="mixture (per expert)")
    axes[0].set_ylabel("log10 depth")
    axes[1].plot(t, series("mixture_leaves"), "s--", color="steelblue",
                 label="mixture")
    axes[1].plot(t, series("single_leaves"), "o-", color="firebrick",
                 label="single operator")
    axes[1].set_ylabel("log10 leaves")
    axes[2].plot(t, series("single_rank"), "o-", color="firebrick",
                 label="rank (exact)")
    axes[2].plot(t, series("mixture_active"), "s--", color="steelblue",
                 label="mixture active (order)")
    axes[2].set_ylabel("log10 value")
    for ax in axes:
        ax.set_xlabel(r"$t = -\log_{10}\,\varepsilon$")
        ax.grid(alpha=0.3)
        ax.legend(fontsize=8)
    return _finish(fig, path)


def compare_figure(rows, path):
    """Test error per leaf count (points + medians) and the memory ledger."""
    leaves = sorted({r.leaves for r in rows})
    fig, axes = plt.subplots(1, 2, **{**FIG_KW, "figsize": (9.0, 4.0)})
    for i, lv in enumerate(leaves):
        errs = [r.test_err for r in rows if r.leaves == lv]
        axes[0].plot([i] * len(errs), errs, "o", alpha=0.6, color="steelblue")
        axes[0].plot([i - 0.2, i + 0.2], [np.median(errs)] * 2, "-",
                     color="firebrick", lw=2)
    axes[0].set_xticks(range(len(leaves)))
    axes[0].set_xticklabels([str(lv) for lv in leaves])
    axes[0].set_xlabel("leaves")
    axes[0].set_ylabel("test relative $L^2$ error")
    axes[0].set_yscale("log")
    axes[0].grid(alpha=0.3)

    width = 0.35
    xs = np.arange(len(leaves))
    actives = [np.mean([r.active_params for r in rows if r.leaves == lv])
               for lv in leaves]
    totals = [np.mean([r.total_params for r in rows if r.leaves == lv])
              for lv in leaves]
    peaks = [np.mean([r.peak_loaded for r in rows if r.leaves == lv])
             for lv in leaves]
    axes[1].bar(xs - width / 2, totals, width, label="total", color="#b0c4da")
    axes[1].bar(xs + width / 2, actives, width, label="active", color="#3b6ea5")
    axes[1].plot(xs, peaks, "k*", markersize=10, label="peak loaded (measured)")
    axes[1].set_xticks(xs)
    axes[1].set_xticklabels([str(lv) for lv in leaves])
    axes[1].set_xlabel("leaves")
    axes[1].set_ylabel("parameters")
    axes[1].legend(fontsize=8)
    axes[1].grid(alpha=0.3, axis="y")
    return _finish(fig, path)


def report_figure(report, path):
    fig, ax = plt.subplots(**FIG_KW)
    names = ["active", "total", "peak loaded"]
    values = [report.active, report.total, report.peak_loaded]
    ax.bar(names, values, color=["#3b6ea5", "#b0c4da", "#4a4a4a"])
    ax.set_ylabel("parameters")
    ax.set_title(f"routing queries per forward: {report.routing}")
    ax.grid(alpha=0.3, axis="y")
    return _finish(fig, path)


def tree_audit_figure(covering, slack_rows, path):
    fig, axes = plt.subplots(1, 2, **{**FIG_KW, "figsize": (9.0, 4.0)})
    levels = [r.level for r in slack_rows]
    axes[0].bar(levels, [r.lhs for r in slack_rows], 0.35, label="level sum")
    axes[0].bar([l + 0.35 for l in levels],
                [r.slack + r.exact_min for r in slack_rows], 0.35,
                label="bound")
    axes[0].set_xlabel("level pair")
    axes[0].set_yscale("log")
    axes[0].legend(fontsize=8)
    axes[0].set_title("k-means recursion audit")
    axes[1].bar(["covering radius", "target"],
                [covering.radius, covering.target_radius],
                color=["#3b6ea5", "#b0c4da"])
    axes[1].set_title(f"implied constant {covering.implied_constant:.3g}")
    for ax in axes:
        ax.grid(alpha=0.3, axis="y")
    return _finish(fig, path)
