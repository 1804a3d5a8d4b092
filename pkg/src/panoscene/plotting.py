"""Figures written next to CLI reports."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

# dropping version and date stamps keeps repeated renders byte-identical
_METADATA = {
    ".png": {"Software": None},
    ".svg": {"Date": None, "Creator": None},
    ".pdf": {"CreationDate": None, "Creator": None, "Producer": None},
}


def _save(fig, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with matplotlib.rc_context({"svg.hashsalt": "panoscene"}):
        fig.savefig(path, dpi=120, metadata=_METADATA.get(path.suffix.lower()))
    plt.close(fig)
    return path


def plot_class_scores(report: dict, path, title: str = "Panoptic quality per class") -> Path:
    """Grouped PQ/SQ/RQ bars per class from a JSON-style report (values already x100)."""
    per_class = report["per_class"]
    names = list(per_class)
    fig, ax = plt.subplots(figsize=(max(6.0, 0.55 * len(names) + 2), 4.0))
    width = 0.27
    for i, key in enumerate(("pq", "sq", "rq")):
        xs = [j + (i - 1) * width for j in range(len(names))]
        ax.bar(xs, [per_class[n][key] for n in names], width, label=key.upper())
    ax.set_xticks(range(len(names)))
    ax.set_xticklabels(names, rotation=60, ha="right", fontsize=8)
    ax.set_ylim(0, 105)
    ax.set_ylabel("score (%)")
    pq_all = report.get("all", {}).get("pq")
    dagger = report.get("pq_dagger", {}).get("all")
    sub = "PQ-All n/a" if pq_all is None else f"PQ-All {pq_all:.2f}"
    if dagger is not None:
        sub += f" | PQ-dagger {dagger:.2f}"
    ax.set_title(f"{title}\n{sub}", fontsize=10)
    ax.legend(fontsize=8, ncol=3, loc="upper right")
    fig.tight_layout()
    return _save(fig, path)


def plot_gradient_check(rows, path, tolerance: float = 1e-4) -> Path:
    """Worst relative gradient error per loss on a log axis, with the pass threshold."""
    fig, ax = plt.subplots(figsize=(6.0, 3.5))
    names = [r.loss for r in rows]
    errs = [max(r.max_rel_err, 1e-16) for r in rows]
    colors = ["tab:green" if r.passed else "tab:red" for r in rows]
    ax.bar(names, errs, color=colors)
    ax.axhline(tolerance, color="k", ls="--", lw=1, label=f"tolerance {tolerance:g}")
    ax.set_yscale("log")
    ax.set_ylabel("max relative error")
    ax.tick_params(axis="x", rotation=30, labelsize=8)
    ax.legend(fontsize=8)
    fig.tight_layout()
    return _save(fig, path)
