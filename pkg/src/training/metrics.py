"""
Evaluation metrics from hard confusion counts

Tree cover is the positive class. mIoU averages the IoU of the tree class and
of the non-tree class (for which TP and TN swap roles, as do FP and FN).
"""
from dataclasses import dataclass
from typing import Dict, Iterable, Sequence

import numpy as np

from ..core.exceptions import LossInputError, TensorShapeError
from ..core.tensor import Tensor

METRIC_EPS = 1e-12
THRESHOLD = 0.5


@dataclass(frozen=True)
class ConfusionCounts:
    tp: int = 0
    fp: int = 0
    fn: int = 0
    tn: int = 0

    def __post_init__(self):
        if min(self.tp, self.fp, self.fn, self.tn) < 0:
            raise LossInputError(f"confusion counts must be non-negative: {self}")

    def __add__(self, other: "ConfusionCounts") -> "ConfusionCounts":
        return ConfusionCounts(self.tp + other.tp, self.fp + other.fp, self.fn + other.fn, self.tn + other.tn)

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.fn + self.tn

    def background(self) -> "ConfusionCounts":
        """Counts with the non-tree class as positive"""
        return ConfusionCounts(tp=self.tn, fp=self.fn, fn=self.fp, tn=self.tp)

    def to_dict(self) -> Dict[str, int]:
        return {"tp": self.tp, "fp": self.fp, "fn": self.fn, "tn": self.tn}


@dataclass(frozen=True)
class Metrics:
    miou: float
    iou: float
    precision: float
    recall: float
    f1: float

    def to_dict(self) -> Dict[str, float]:
        return {"miou": self.miou, "iou": self.iou, "precision": self.precision, "recall": self.recall, "f1": self.f1}


def _as_array(value) -> np.ndarray:
    return value.data if isinstance(value, Tensor) else np.asarray(value)


def binarize(prob, threshold: float = THRESHOLD) -> np.ndarray:
    return _as_array(prob) >= threshold


def confusion(pred, label) -> ConfusionCounts:
    """Exact pixel counts of two binary masks"""
    pred, label = _as_array(pred).astype(bool), _as_array(label).astype(bool)
    if pred.shape != label.shape:
        raise TensorShapeError(f"prediction {pred.shape} and label {label.shape} differ")
    return ConfusionCounts(
        tp=int(np.count_nonzero(pred & label)),
        fp=int(np.count_nonzero(pred & ~label)),
        fn=int(np.count_nonzero(~pred & label)),
        tn=int(np.count_nonzero(~pred & ~label)),
    )


def _iou(c: ConfusionCounts) -> float:
    return c.tp / max(c.tp + c.fp + c.fn, METRIC_EPS)


def metrics(c: ConfusionCounts) -> Metrics:
    """mIoU, tree IoU, precision, recall and F1"""
    iou = _iou(c)
    precision = c.tp / max(c.tp + c.fp, METRIC_EPS)
    recall = c.tp / max(c.tp + c.fn, METRIC_EPS)
    f1 = 2 * precision * recall / max(precision + recall, METRIC_EPS)
    miou = 0.5 * (iou + _iou(c.background()))
    return Metrics(miou=miou, iou=iou, precision=precision, recall=recall, f1=f1)


def accumulate(counts: Iterable[ConfusionCounts]) -> ConfusionCounts:
    total = ConfusionCounts()
    for c in counts:
        total = total + c
    return total


@dataclass(frozen=True)
class DetectionCounts:
    """Top-K selection vs. ground-truth change cells of one scene"""
    hits: int
    selected: int
    changed: int

    @classmethod
    def of(cls, selected: Sequence[int], changed: Sequence[int]) -> "DetectionCounts":
        return cls(len(set(selected) & set(changed)), len(set(selected)), len(set(changed)))

    @property
    def recall(self) -> float:
        return self.hits / self.changed if self.changed else float("nan")

    @property
    def precision(self) -> float:
        return self.hits / self.selected if self.selected else float("nan")


def detection_summary(scenes: Sequence[DetectionCounts]) -> Dict[str, object]:
    """Scene-averaged recall/precision, skipping scenes where a ratio is undefined"""
    recalls = [s.recall for s in scenes if s.changed]
    precisions = [s.precision for s in scenes if s.selected and s.changed]
    return {
        "recall": float(np.mean(recalls)) if recalls else None,
        "precision": float(np.mean(precisions)) if precisions else None,
        "scenes": len(recalls),
    }
