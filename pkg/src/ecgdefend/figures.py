"""Figure rendering for the CLI report path.

Each helper turns result rows or crafted samples into a PNG next to the
delimited output. The evaluation modules themselves stay plot-free; these
functions consume their CSV-shaped rows.
"""

from __future__ import annotations

from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

_METHOD_ORDER = ("none", "jr", "nsr", "dd", "at", "init-adt", "dist-adt", "adt")


def _grouped(rows: list[dict], value_key: str) -> dict[str, dict[float, list[float]]]:
    series: dict[str, dict[float, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        if row.get("axis_value") in ("", None):
            continue
        series[row["method"]][float(row["axis_value"])].append(float(row[value_key]))
    return series


def sweep_figure(rows: list[dict], axis_label: str, out_path) -> Path:
    """Accuracy and macro-F1 curves per method over a sweep axis."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    for panel, (metric, title) in zip(
        axes, (("accuracy", "Accuracy"), ("macro_f1", "Macro F1"))
    ):
        series = _grouped(rows, metric)
        for method in _METHOD_ORDER:
            if method not in series:
                continue
            xs = sorted(series[method])
            means = [float(np.mean(series[method][x])) for x in xs]
            panel.plot(xs, means, marker="o", label=method)
        panel.set_xlabel(axis_label)
        panel.set_ylabel(title)
        panel.set_ylim(0.0, 1.05)
        panel.grid(alpha=0.3)
    axes[0].legend(fontsize=8, ncol=2)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def perturbation_figure(
    original: np.ndarray,
    jagged_adv: np.ndarray,
    smoothed_adv: np.ndarray,
    out_path,
    span: int | None = 256,
) -> Path:
    """Original trace against its jagged and smoothed attacked counterparts."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    n = len(original) if span is None else min(span, len(original))
    t = np.arange(n)
    fig, axes = plt.subplots(3, 1, figsize=(9, 6), sharex=True)
    for panel, (trace, title) in zip(
        axes,
        (
            (original, "original"),
            (jagged_adv, "sign-gradient attack"),
            (smoothed_adv, "smoothed attack"),
        ),
    ):
        panel.plot(t, np.asarray(trace)[:n], linewidth=0.9)
        panel.set_title(title, fontsize=9, loc="left")
        panel.grid(alpha=0.3)
    axes[-1].set_xlabel("sample")
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path


def situation_bar_figure(rows: list[dict], out_path) -> Path:
    """Mean adversarial accuracy per method, one bar group per situation."""
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    by_situation: dict[str, dict[str, list[float]]] = defaultdict(
        lambda: defaultdict(list)
    )
    for row in rows:
        if row.get("axis"):
            continue
        by_situation[row["situation"]][row["method"]].append(float(row["accuracy"]))
    situations = sorted(by_situation)
    methods = [
        m for m in _METHOD_ORDER if any(m in by_situation[s] for s in situations)
    ]
    width = 0.8 / max(len(situations), 1)
    fig, ax = plt.subplots(figsize=(9, 4))
    x = np.arange(len(methods))
    for offset, situation in enumerate(situations):
        means = [
            float(np.mean(by_situation[situation].get(m, [np.nan]))) for m in methods
        ]
        ax.bar(x + offset * width, means, width, label=f"situation {situation}")
    ax.set_xticks(x + width * (len(situations) - 1) / 2)
    ax.set_xticklabels(methods, rotation=30, ha="right")
    ax.set_ylabel("adversarial accuracy")
    ax.set_ylim(0.0, 1.05)
    ax.grid(axis="y", alpha=0.3)
    ax.legend(fontsize=8)
    fig.tight_layout()
    fig.savefig(out_path, dpi=150)
    plt.close(fig)
    return out_path
