"""Confusion matrix and F1 accounting for the four-class signal task.

Rows are ground truth (Normal, AF, Other, Noise), columns predictions. The
per-class F1 is twice the diagonal count over the sum of the row and column
marginals; the headline score is the arithmetic mean of the four. A class
absent from both truth and prediction scores 0 by convention.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .data import LABELS, LABEL_TO_INDEX

NUM_CLASSES = len(LABELS)


class MetricsError(ValueError):
    pass


@dataclass
class ConfusionMatrix:
    counts: np.ndarray

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.shape != (NUM_CLASSES, NUM_CLASSES):
            raise MetricsError(
                f"expected a {NUM_CLASSES}x{NUM_CLASSES} matrix, got "
                f"{self.counts.shape}"
            )
        if (self.counts < 0).any():
            raise MetricsError("confusion counts must be non-negative")

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def row_totals(self) -> np.ndarray:
        return self.counts.sum(axis=1)

    def column_totals(self) -> np.ndarray:
        return self.counts.sum(axis=0)


@dataclass
class MetricsReport:
    """Accuracy, per-class and macro F1, and the drop against a clean baseline.

    `drop_pct` is (clean - adversarial) / clean in percent; it is None until
    a protocol fills it in and may be negative when the attacked score beats
    the clean one.
    """

    accuracy: float
    f1_per_class: dict[str, float]
    macro_f1: float
    drop_pct: float | None = None

    def with_drop(self, clean_accuracy: float) -> "MetricsReport":
        if clean_accuracy <= 0:
            raise MetricsError("clean accuracy must be positive to compute a drop")
        drop = (clean_accuracy - self.accuracy) / clean_accuracy * 100.0
        return MetricsReport(self.accuracy, dict(self.f1_per_class), self.macro_f1,
                             drop)


def _as_indices(values) -> np.ndarray:
    arr = np.asarray(values)
    if arr.dtype.kind in "US":
        return np.array([LABEL_TO_INDEX[str(v)] for v in arr], dtype=np.intp)
    return arr.astype(np.intp)


def confusion_matrix(predictions, labels) -> ConfusionMatrix:
    """Tally (ground truth, prediction) pairs; accepts indices or label names."""
    pred = _as_indices(predictions)
    truth = _as_indices(labels)
    if pred.shape != truth.shape:
        raise MetricsError(
            f"{pred.size} predictions against {truth.size} labels"
        )
    if truth.size and (
        truth.min() < 0 or truth.max() >= NUM_CLASSES
        or pred.min() < 0 or pred.max() >= NUM_CLASSES
    ):
        raise MetricsError("class indices out of range")
    counts = np.zeros((NUM_CLASSES, NUM_CLASSES), dtype=np.int64)
    np.add.at(counts, (truth, pred), 1)
    return ConfusionMatrix(counts)


def f1_scores(cm: ConfusionMatrix) -> MetricsReport:
    """Per-class F1, their mean, and trace accuracy from a confusion matrix."""
    rows = cm.row_totals()
    cols = cm.column_totals()
    per_class: dict[str, float] = {}
    for index, name in enumerate(LABELS):
        denominator = rows[index] + cols[index]
        per_class[name] = (
            0.0 if denominator == 0
            else 2.0 * cm.counts[index, index] / denominator
        )
    macro = float(np.mean([per_class[name] for name in LABELS]))
    acc = float(np.trace(cm.counts) / cm.total) if cm.total else 0.0
    return MetricsReport(accuracy=acc, f1_per_class=per_class, macro_f1=macro)
