from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Metrics:
    accuracy: float
    macro_f1: float
    per_class_recall: list[float]
    per_class_f1: list[float]
    confusion: list[list[int]]

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "macro_f1": self.macro_f1,
            "per_class_recall": list(self.per_class_recall),
            "per_class_f1": list(self.per_class_f1),
            "confusion": [list(r) for r in self.confusion],
        }


def confusion_matrix(pred, true, n_classes: int) -> np.ndarray:
    """Rows are true classes, columns predicted classes."""
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(true, dtype=np.int64), np.asarray(pred, dtype=np.int64)), 1)
    return cm


def classification_metrics(pred, true, n_classes: int) -> Metrics:
    """Accuracy, macro-F1 and per-class recall.

    Classes with no support in either truth or prediction score F1 = 0;
    recall of a class absent from the truth is 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    true = np.asarray(true, dtype=np.int64)
    if pred.shape != true.shape:
        raise ValueError("pred and true must have equal length")
    cm = confusion_matrix(pred, true, n_classes)
    tp = np.diag(cm).astype(np.float64)
    support = cm.sum(axis=1)
    predicted = cm.sum(axis=0)
    recall = np.divide(tp, support, out=np.zeros(n_classes), where=support > 0)
    precision = np.divide(tp, predicted, out=np.zeros(n_classes), where=predicted > 0)
    denom = precision + recall
    f1 = np.divide(2 * precision * recall, denom, out=np.zeros(n_classes), where=denom > 0)
    total = cm.sum()
    return Metrics(
        accuracy=float(tp.sum() / total) if total else 0.0,
        macro_f1=float(f1.mean()) if n_classes else 0.0,
        per_class_recall=[float(r) for r in recall],
        per_class_f1=[float(x) for x in f1],
        confusion=cm.tolist(),
    )
