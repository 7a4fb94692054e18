"""Report emission: line-delimited records plus rendered figures.

Reports are written next to each other in a directory: a .jsonl file with
one machine-readable record per line and PNG figures for the human.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt  # noqa: E402


def write_records(path, rows) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
    return path


def render_loss_curve(losses, path, title="training loss") -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(range(1, len(losses) + 1), losses, lw=1.2)
    ax.set_xlabel("step")
    ax.set_ylabel("cross-entropy")
    ax.set_title(title)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_accuracy_bars(cells, path, title="accuracy") -> Path:
    """Grouped base/novel/HM bars, one group per cell.

    cells: list of dicts with keys cell, acc_base, acc_novel, hm.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    labels = [c["cell"] for c in cells]
    xs = range(len(cells))
    width = 0.27
    fig, ax = plt.subplots(figsize=(max(6, 1.1 * len(cells)), 3.8))
    for off, key, label in ((-width, "acc_base", "base"),
                            (0.0, "acc_novel", "novel"),
                            (width, "hm", "HM")):
        ax.bar([x + off for x in xs], [100.0 * c[key] for c in cells],
               width=width, label=label)
    ax.set_xticks(list(xs))
    ax.set_xticklabels(labels, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("percent")
    ax.set_title(title)
    ax.legend(fontsize=8)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def render_target_bars(rows, path, title="transfer accuracy") -> Path:
    """One bar per (name, accuracy) pair."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    names = [r[0] for r in rows]
    accs = [100.0 * r[1] for r in rows]
    fig, ax = plt.subplots(figsize=(max(5, 0.9 * len(rows)), 3.5))
    ax.bar(range(len(rows)), accs)
    ax.set_xticks(range(len(rows)))
    ax.set_xticklabels(names, rotation=30, ha="right", fontsize=8)
    ax.set_ylabel("accuracy (%)")
    ax.set_title(title)
    ax.grid(True, axis="y", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path
