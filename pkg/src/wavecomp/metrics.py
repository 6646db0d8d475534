"""Confusion matrices and per-class metrics.

``accuracy_mc`` is the mean over classes of the one-vs-rest binary accuracy
``(TP + TN) / (TP + TN + FP + FN)``; it is not the trace over the total.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .errors import EmptyMatrix, ShapeMismatch


@dataclass
class ConfusionMatrix:
    """``matrix[i, j]`` counts samples of true class ``i`` predicted as ``j``."""

    matrix: np.ndarray
    class_names: list[str]

    def __post_init__(self):
        self.matrix = np.asarray(self.matrix, dtype=np.int64)
        m = self.matrix
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ShapeMismatch(f"confusion matrix must be square, got {m.shape}")
        if np.any(m < 0):
            raise ValueError("confusion matrix entries must be nonnegative")
        if not self.class_names:
            self.class_names = [str(i) for i in range(m.shape[0])]
        if len(self.class_names) != m.shape[0]:
            raise ShapeMismatch(f"{len(self.class_names)} names for {m.shape[0]} classes")

    @classmethod
    def from_labels(cls, true_labels, pred_labels, class_names) -> "ConfusionMatrix":
        n = len(class_names)
        m = np.zeros((n, n), dtype=np.int64)
        np.add.at(m, (np.asarray(true_labels, dtype=np.intp),
                      np.asarray(pred_labels, dtype=np.intp)), 1)
        return cls(m, list(class_names))

    @property
    def total(self) -> int:
        return int(self.matrix.sum())

    def counts(self):
        """Per-class one-vs-rest ``(tp, fp, fn, tn)`` arrays."""
        m = self.matrix
        tp = np.diag(m)
        fn = m.sum(axis=1) - tp
        fp = m.sum(axis=0) - tp
        tn = m.sum() - tp - fp - fn
        return tp, fp, fn, tn

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["true\\pred"] + list(self.class_names))
            for name, row in zip(self.class_names, self.matrix):
                w.writerow([name] + [int(v) for v in row])


def _require_samples(cm: ConfusionMatrix) -> None:
    if cm.total <= 0:
        raise EmptyMatrix("confusion matrix holds no samples")


def accuracy_mc(cm: ConfusionMatrix) -> float:
    """Mean one-vs-rest accuracy over all classes.

    Every class shares the denominator ``total``, so the mean is a single
    integer ratio and the result is correctly rounded.
    """
    _require_samples(cm)
    tp, fp, fn, tn = cm.counts()
    return int((tp + tn).sum()) / (len(tp) * cm.total)


def plain_accuracy(cm: ConfusionMatrix) -> float:
    """Fraction of samples on the diagonal."""
    _require_samples(cm)
    return float(np.trace(cm.matrix) / cm.total)


@dataclass(frozen=True)
class ClassMetrics:
    name: str
    precision: float
    recall: float
    f1: float
    accuracy: float  # one-vs-rest
    support: int
    undefined: tuple[str, ...] = ()  # metrics whose denominator was zero


def precision_recall_f1(cm: ConfusionMatrix) -> list[ClassMetrics]:
    """Per-class precision, recall, F1 and one-vs-rest accuracy.

    A zero denominator yields 0 and the metric name is listed in
    ``undefined`` so the table keeps one row per class.
    """
    _require_samples(cm)
    tp, fp, fn, tn = cm.counts()
    rows = []
    for i, name in enumerate(cm.class_names):
        flags = []
        if tp[i] + fp[i] == 0:
            precision = 0.0
            flags.append("precision")
        else:
            precision = tp[i] / (tp[i] + fp[i])
        if tp[i] + fn[i] == 0:
            recall = 0.0
            flags.append("recall")
        else:
            recall = tp[i] / (tp[i] + fn[i])
        if tp[i] == 0:
            f1 = 0.0
            flags.append("f1")
        else:
            # harmonic mean of precision and recall, as one ratio of counts
            f1 = 2 * tp[i] / (2 * tp[i] + fp[i] + fn[i])
        acc = int(tp[i] + tn[i]) / cm.total
        rows.append(ClassMetrics(name, float(precision), float(recall), float(f1), float(acc),
                                 int(tp[i] + fn[i]), tuple(flags)))
    return rows


def write_metrics_csv(rows: list[ClassMetrics], path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["class", "precision", "recall", "f1", "one_vs_rest_accuracy", "support",
                    "undefined"])
        for r in rows:
            w.writerow([r.name, f"{r.precision:.4f}", f"{r.recall:.4f}", f"{r.f1:.4f}",
                        f"{r.accuracy:.4f}", r.support, ";".join(r.undefined)])


def format_table(rows: list[ClassMetrics]) -> str:
    width = max([len(r.name) for r in rows] + [5])
    lines = [f"{'class':<{width}}  precision  recall  f1     accuracy(1-vs-rest)"]
    for r in rows:
        mark = " *" if r.undefined else ""
        lines.append(f"{r.name:<{width}}  {r.precision:9.2f}  {r.recall:6.2f}  {r.f1:5.2f}  "
                     f"{100 * r.accuracy:6.2f}%{mark}")
    if any(r.undefined for r in rows):
        lines.append("* zero denominator, reported as 0")
    return "\n".join(lines)
