"""Confusion matrices, macro-averaged metrics and report tables."""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass

import numpy as np


def confusion(pred, true, num_classes: int) -> np.ndarray:
    """counts[t, p] = number of samples of true class t predicted as p."""
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {true.shape}")
    for name, a in (("pred", pred), ("true", true)):
        if a.size and (a.min() < 0 or a.max() >= num_classes):
            raise ValueError(f"{name} index outside [0, {num_classes})")
    cm = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(cm, (true, pred), 1)
    return cm


@dataclass
class MetricsReport:
    accuracy: float
    macro_precision: float
    macro_recall: float
    macro_f1: float
    per_class_precision: np.ndarray
    per_class_recall: np.ndarray
    per_class_f1: np.ndarray
    confusion: np.ndarray
    empty_prediction_classes: tuple[int, ...] = ()

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_precision": self.macro_precision,
            "macro_recall": self.macro_recall,
            "macro_f1": self.macro_f1,
            "per_class_precision": self.per_class_precision.tolist(),
            "per_class_recall": self.per_class_recall.tolist(),
            "per_class_f1": self.per_class_f1.tolist(),
            "confusion": self.confusion.tolist(),
            "empty_prediction_classes": list(self.empty_prediction_classes),
        }


def _safe_div(num, den):
    num = np.asarray(num, dtype=np.float64)
    den = np.asarray(den, dtype=np.float64)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def report(cm) -> MetricsReport:
    """Per-class and macro metrics; a class nobody predicted gets precision 0
    and is listed in ``empty_prediction_classes``."""
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    if total <= 0:
        raise ValueError("confusion matrix is empty")
    tp = np.diag(cm)
    predicted = cm.sum(axis=0)
    actual = cm.sum(axis=1)
    precision = _safe_div(tp, predicted)
    recall = _safe_div(tp, actual)
    f1 = _safe_div(2 * precision * recall, precision + recall)
    return MetricsReport(
        accuracy=float(tp.sum() / total),
        macro_precision=float(precision.mean()),
        macro_recall=float(recall.mean()),
        macro_f1=float(f1.mean()),
        per_class_precision=precision,
        per_class_recall=recall,
        per_class_f1=f1,
        confusion=cm,
        empty_prediction_classes=tuple(int(c) for c in np.flatnonzero(predicted == 0)),
    )


def evaluate(pred, true, num_classes: int) -> MetricsReport:
    return report(confusion(pred, true, num_classes))


def _rows(reports):
    m = max(len(r.per_class_precision) for _, r in reports)
    header = ["model", "Acc", "Pre", "Rec", "F1"] + [str(i) for i in range(m)]
    rows = []
    for label, r in reports:
        vals = [r.accuracy, r.macro_precision, r.macro_recall, r.macro_f1, *r.per_class_precision]
        rows.append([label] + [round(100 * v, 2) for v in vals])
    return header, rows


def render_table(reports: list[tuple[str, MetricsReport]], fmt: str = "text") -> str:
    """Acc / Pre / Rec / F1 then per-class precision, as percentages (2 dp)."""
    if not reports:
        raise ValueError("need at least one report")
    header, rows = _rows(reports)
    if fmt == "json":
        return json.dumps([dict(zip(header, row)) for row in rows], indent=2)
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([row[0]] + [f"{v:.2f}" for v in row[1:]])
        return buf.getvalue()
    if fmt != "text":
        raise ValueError(f"unknown format {fmt!r}")
    cells = [header] + [[row[0]] + [f"{v:.2f}" for v in row[1:]] for row in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(header))]
    lines = ["  ".join(c.rjust(w) for c, w in zip(r, widths)) for r in cells]
    lines.insert(1, "-" * len(lines[0]))
    return "\n".join(lines) + "\n"
