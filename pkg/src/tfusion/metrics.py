"""Classification metrics from a confusion matrix.

Per class: precision, recall, F1, and IoU = TP/(TP+FP+FN); any 0/0 ratio is
defined as 0 so degenerate classes never produce NaN. Accuracy is the trace
over the total and top-1 error is computed as its exact complement.
"""

import json
from dataclasses import dataclass

import numpy as np

from .errors import DataError, LabelError, SizeError


def confusion_matrix(true_labels, pred_labels, k: int) -> np.ndarray:
    """K x K count grid: rows are true classes, columns predictions."""
    true_labels = list(true_labels)
    pred_labels = list(pred_labels)
    if len(true_labels) != len(pred_labels):
        raise SizeError(f"{len(true_labels)} true labels vs {len(pred_labels)} predictions")
    cm = np.zeros((k, k), dtype=np.int64)
    for t, p in zip(true_labels, pred_labels):
        if not (0 <= t < k and 0 <= p < k):
            raise LabelError(f"label pair ({t},{p}) outside [0,{k})")
        cm[t, p] += 1
    return cm


def _ratio(num, den):
    return float(num) / float(den) if den else 0.0


@dataclass
class ClassMetrics:
    cls: int
    precision: float
    recall: float
    f1: float
    iou: float


@dataclass
class MetricsReport:
    accuracy: float
    top1_error: float
    per_class: list
    macro_precision: float
    macro_recall: float
    macro_f1: float
    macro_iou: float
    confusion: np.ndarray

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "top1_error": self.top1_error,
            "per_class": [
                {"class": c.cls, "precision": c.precision, "recall": c.recall,
                 "f1": c.f1, "iou": c.iou}
                for c in self.per_class
            ],
            "macro": {
                "precision": self.macro_precision,
                "recall": self.macro_recall,
                "f1": self.macro_f1,
                "iou": self.macro_iou,
            },
            "confusion": self.confusion.tolist(),
        }

    def to_json(self, indent=2) -> str:
        return json.dumps(self.to_dict(), indent=indent)


def classification_metrics(cm: np.ndarray) -> MetricsReport:
    cm = np.asarray(cm)
    if cm.ndim != 2 or cm.shape[0] != cm.shape[1]:
        raise SizeError(f"confusion matrix must be square, got {cm.shape}")
    total = int(cm.sum())
    if total == 0:
        raise DataError("confusion matrix is empty")
    tp = np.diag(cm)
    fp = cm.sum(axis=0) - tp
    fn = cm.sum(axis=1) - tp

    per_class = []
    for c in range(cm.shape[0]):
        p = _ratio(tp[c], tp[c] + fp[c])
        r = _ratio(tp[c], tp[c] + fn[c])
        f1 = _ratio(2.0 * p * r, p + r)
        iou = _ratio(tp[c], tp[c] + fp[c] + fn[c])
        per_class.append(ClassMetrics(c, p, r, f1, iou))

    accuracy = float(tp.sum()) / total
    k = len(per_class)
    return MetricsReport(
        accuracy=accuracy,
        top1_error=1.0 - accuracy,
        per_class=per_class,
        macro_precision=sum(c.precision for c in per_class) / k,
        macro_recall=sum(c.recall for c in per_class) / k,
        macro_f1=sum(c.f1 for c in per_class) / k,
        macro_iou=sum(c.iou for c in per_class) / k,
        confusion=cm,
    )
