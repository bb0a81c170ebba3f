"""Attack and defense evaluation measures.

Every rate keeps its integer numerator and denominator so reports can be
re-derived and audited; the float value is always numerator/denominator.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .attack import Trigger
from .errors import EmptyEligibleSet, LengthMismatch


@dataclass(frozen=True)
class Rate:
    """A fraction with its counts attached."""

    numerator: int
    denominator: int

    @property
    def value(self) -> float:
        if self.denominator == 0:
            raise EmptyEligibleSet("rate with zero denominator")
        return self.numerator / self.denominator

    def to_dict(self) -> dict:
        return {
            "numerator": self.numerator,
            "denominator": self.denominator,
            "value": self.value,
        }

    def __format__(self, spec: str) -> str:
        return format(self.value, spec)


def accuracy(predictions: np.ndarray, labels: np.ndarray) -> Rate:
    predictions = np.asarray(predictions)
    labels = np.asarray(labels)
    if len(predictions) != len(labels):
        raise LengthMismatch("predictions and labels differ in length")
    if len(labels) == 0:
        raise EmptyEligibleSet("no rows to score")
    return Rate(int(np.sum(predictions == labels)), len(labels))


def cda(model, X: np.ndarray, y: np.ndarray) -> Rate:
    """Clean-data accuracy of a (possibly poisoned) model."""
    return accuracy(model.predict(X), y)


def asr(model, X: np.ndarray, y: np.ndarray, trigger: Trigger,
        include_target_rows: bool = False) -> Rate:
    """Attack success rate: triggered rows classified as the target.

    Rows whose true label already is the target are excluded by default;
    include_target_rows=True scores every row instead. Both variants are
    worth reporting, so callers typically compute the pair.
    """
    y = np.asarray(y, dtype=np.int64)
    eligible = np.arange(len(y)) if include_target_rows else np.flatnonzero(y != trigger.target)
    if len(eligible) == 0:
        raise EmptyEligibleSet("no eligible rows for ASR")
    preds = model.predict(trigger.apply(np.asarray(X)[eligible]))
    return Rate(int(np.sum(preds == trigger.target)), len(eligible))


def asr_from_predictions(predictions: np.ndarray, y: np.ndarray, target: int,
                         include_target_rows: bool = False) -> Rate:
    """ASR when predictions on triggered rows were produced elsewhere.

    Used for released-form evaluation where triggering happens on raw rows
    before the victim's own preprocessing.
    """
    predictions = np.asarray(predictions)
    y = np.asarray(y, dtype=np.int64)
    if len(predictions) != len(y):
        raise LengthMismatch("predictions and labels differ in length")
    eligible = np.arange(len(y)) if include_target_rows else np.flatnonzero(y != target)
    if len(eligible) == 0:
        raise EmptyEligibleSet("no eligible rows for ASR")
    return Rate(int(np.sum(predictions[eligible] == target)), len(eligible))


@dataclass(frozen=True)
class ConfusionSummary:
    """Binary detection outcome for defenses flagging poisoned rows."""

    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def precision(self) -> float:
        return self.tp / (self.tp + self.fp) if (self.tp + self.fp) else 0.0

    @property
    def recall(self) -> float:
        return self.tp / (self.tp + self.fn) if (self.tp + self.fn) else 0.0

    @property
    def f1(self) -> float:
        p, r = self.precision, self.recall
        return 2 * p * r / (p + r) if (p + r) else 0.0

    def to_dict(self) -> dict:
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall, "f1": self.f1,
        }


def confusion(flagged: np.ndarray, truth: np.ndarray) -> ConfusionSummary:
    """Compare boolean flags against ground truth of the same length."""
    flagged = np.asarray(flagged, dtype=bool)
    truth = np.asarray(truth, dtype=bool)
    if len(flagged) != len(truth):
        raise LengthMismatch("flags and truth differ in length")
    return ConfusionSummary(
        tp=int(np.sum(flagged & truth)),
        fp=int(np.sum(flagged & ~truth)),
        tn=int(np.sum(~flagged & ~truth)),
        fn=int(np.sum(~flagged & truth)),
    )


def flags_from_indices(indices: np.ndarray, n: int) -> np.ndarray:
    """Boolean mask of length n with the given indices set."""
    mask = np.zeros(n, dtype=bool)
    mask[np.asarray(indices, dtype=np.int64)] = True
    return mask
