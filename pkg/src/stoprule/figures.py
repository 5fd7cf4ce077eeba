"""Rendered companions to the CSV reports (training curves, benchmark charts).

Everything draws through the Agg backend so the functions work headless; each
writes one PNG next to the delimited output it illustrates. The CSV stays the
primary artifact — these are for eyeballing a run, not for further processing.
"""

from __future__ import annotations

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt

__all__ = ["save_training_curve", "save_bench_chart"]


def save_training_curve(records, path, reference=None, title="training objective"):
    """Objective per training step, with the reference value ruled in if given."""
    fig, ax = plt.subplots(figsize=(7.0, 4.2))
    steps = [r.step for r in records]
    ax.plot(steps, [r.objective for r in records], lw=0.9, color="#1f6fb2", label="batch objective")
    if len(records) >= 20:
        window = min(100, max(5, len(records) // 10))
        means = _trailing_means([r.objective for r in records], window)
        ax.plot(steps, means, lw=1.8, color="#d97708", label=f"trailing mean ({window})")
    if reference is not None:
        ax.axhline(reference, color="#555555", ls="--", lw=1.0, label=f"reference {reference:g}")
    ax.set_xlabel("step")
    ax.set_ylabel("objective")
    ax.set_title(title)
    if records or reference is not None:
        ax.legend(loc="lower right", fontsize=8)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def save_bench_chart(rows, path, title="benchmark deviations"):
    """Horizontal bars of (estimate − reference)/reference per benchmark row.

    ``rows`` holds (label, estimate, reference) triples; rows lacking a
    reference are drawn at zero with a hollow marker so they stay visible.
    """
    fig, ax = plt.subplots(figsize=(7.0, 1.0 + 0.45 * max(1, len(rows))))
    labels, devs, missing = [], [], []
    for label, estimate, reference in rows:
        labels.append(label)
        if reference:
            devs.append((estimate - reference) / reference)
            missing.append(False)
        else:
            devs.append(0.0)
            missing.append(True)
    y = range(len(labels))
    colors = ["#bbbbbb" if m else ("#1f6fb2" if d <= 0 else "#b2341f") for d, m in zip(devs, missing)]
    ax.barh(y, devs, color=colors, height=0.6)
    for i, m in enumerate(missing):
        if m:
            ax.plot([0.0], [i], marker="o", mfc="none", mec="#888888")
    ax.axvline(0.0, color="#333333", lw=1.0)
    ax.set_yticks(list(y), labels=labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("relative deviation from reference")
    ax.set_title(title)
    fig.tight_layout()
    fig.savefig(path, dpi=110)
    plt.close(fig)


def _trailing_means(values, window):
    out = []
    acc = 0.0
    for i, v in enumerate(values):
        acc += v
        if i >= window:
            acc -= values[i - window]
        out.append(acc / min(i + 1, window))
    return out
