"""Report figures. Uses the non-interactive Agg backend."""
from __future__ import annotations

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

STYLE = {
    "font.size": 9,
    "axes.labelsize": 9,
    "legend.fontsize": 8,
    "xtick.labelsize": 8,
    "ytick.labelsize": 8,
    "axes.spines.top": False,
    "axes.spines.right": False,
}


def robustness_figure(rows_by_kind: dict, path) -> None:
    """AUC against attack fraction, one line per reweighter, 2 SE error bars."""
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(4.0, 2.8))
        for kind, rows in rows_by_kind.items():
            eps = [r["epsilon"] for r in rows]
            a = np.array([r["auc"] for r in rows])
            se = np.array([r["stderr"] for r in rows])
            ax.errorbar(eps, a, yerr=2 * se, marker="o", ms=3, capsize=2, label=kind)
        ax.set_xlabel("substituted fraction")
        ax.set_ylabel("AUC")
        ax.set_ylim(0.45, 1.02)
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)


def sensitivity_figure(rows: list[dict], path) -> None:
    """Mean per-token score per detector setting, grouped by reweighter."""
    kinds = list(dict.fromkeys(r["reweight"] for r in rows))
    labels = list(dict.fromkeys(f"{r['parameter'][0].upper()}={r['value']}" for r in rows))
    x = np.arange(len(labels))
    width = 0.8 / max(1, len(kinds))
    with plt.rc_context(STYLE):
        fig, ax = plt.subplots(figsize=(5.0, 2.8))
        for j, kind in enumerate(kinds):
            sub = [r for r in rows if r["reweight"] == kind]
            means = [r["mean"] for r in sub]
            bars = ax.bar(x + (j - (len(kinds) - 1) / 2) * width, means, width, label=kind)
            for b, r in zip(bars, sub):
                if r["matched"]:
                    b.set_edgecolor("black")
                    b.set_linewidth(1.2)
        ax.set_xticks(x)
        ax.set_xticklabels(labels, rotation=30, ha="right")
        ax.set_ylabel("mean score per token")
        ax.legend(frameon=False)
        fig.tight_layout()
        fig.savefig(path, dpi=150)
        plt.close(fig)
