"""Cluster-vs-class scoring through an optimal one-to-one matching."""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import linear_sum_assignment

from .errors import DimensionMismatch


@dataclass
class ConfusionMatrix:
    counts: np.ndarray  # K_pred x K_true

    def __post_init__(self):
        self.counts = np.asarray(self.counts, dtype=np.int64)
        if self.counts.ndim != 2:
            raise DimensionMismatch("confusion matrix must be 2-D")
        if np.any(self.counts < 0):
            raise ValueError("confusion counts must be non-negative")

    @property
    def total(self):
        return int(self.counts.sum())

    def __add__(self, other):
        return ConfusionMatrix(self.counts + other.counts)

    @classmethod
    def from_labels(cls, pred, true, k_pred, k_true):
        pred = np.asarray(pred, dtype=np.int64).ravel()
        true = np.asarray(true, dtype=np.int64).ravel()
        if pred.shape != true.shape:
            raise DimensionMismatch(f"{pred.size} predictions vs {true.size} labels")
        counts = np.zeros((k_pred, k_true), dtype=np.int64)
        np.add.at(counts, (pred, true), 1)
        return cls(counts)


def _counts(cm):
    return cm.counts if isinstance(cm, ConfusionMatrix) else np.asarray(cm, dtype=np.int64)


def hungarian_match(cm):
    """Injective predicted->true map maximizing the number of matched locations.

    Rectangular matrices are fine: with more clusters than classes the extra
    clusters stay unassigned and all their locations count as errors.
    """
    c = _counts(cm)
    rows, cols = linear_sum_assignment(c, maximize=True)
    return {int(r): int(t) for r, t in zip(rows, cols)}


def matched_count(cm, assignment):
    c = _counts(cm)
    return int(sum(c[p, t] for p, t in assignment.items()))


def accuracy(cm, assignment):
    c = _counts(cm)
    total = c.sum()
    return matched_count(c, assignment) / total if total else 0.0


def miou(cm, assignment):
    """Mean IoU over true classes that occur at least once.

    A class with no matched cluster scores 0.
    """
    c = _counts(cm)
    inverse = {t: p for p, t in assignment.items()}
    support = c.sum(axis=0)
    ious = []
    for t in range(c.shape[1]):
        if support[t] == 0:
            continue
        p = inverse.get(t)
        if p is None:
            ious.append(0.0)
            continue
        tp = c[p, t]
        fp = c[p].sum() - tp
        fn = support[t] - tp
        ious.append(tp / (tp + fp + fn))
    return float(np.mean(ious)) if ious else 0.0


def score(pred, true, k_pred, k_true):
    """``(accuracy, miou)`` of hard predictions against labels."""
    cm = ConfusionMatrix.from_labels(pred, true, k_pred, k_true)
    a = hungarian_match(cm)
    return accuracy(cm, a), miou(cm, a)
