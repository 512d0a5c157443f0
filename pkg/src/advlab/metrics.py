"""Confusion counts and the detection metrics derived from them.

Ratios are formed with :class:`fractions.Fraction` and converted to float
once, so every value is the correctly rounded exact rational. A ratio whose
denominator is zero is reported as ``None`` (rendered ``NA``), never NaN.
"""

from __future__ import annotations

from dataclasses import dataclass, fields
from fractions import Fraction

import numpy as np
from scipy.stats import rankdata

from .errors import DataError

METRIC_KEYS = ("accuracy", "precision", "recall", "f1", "fpr", "auc_paper", "auc_roc")
UNDEFINED = "NA"


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    tn: int
    fp: int
    fn: int

    def __post_init__(self):
        if min(self.tp, self.tn, self.fp, self.fn) < 0:
            raise DataError("confusion counts must be non-negative")

    @property
    def total(self):
        return self.tp + self.tn + self.fp + self.fn


@dataclass(frozen=True)
class MetricsReport:
    accuracy: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    fpr: float | None
    auc_paper: float | None
    auc_roc: float | None = None

    def as_dict(self):
        return {k: getattr(self, k) for k in METRIC_KEYS}

    def to_record(self):
        """Flat ``key -> text`` record: four decimals, undefined as ``NA``."""
        return {k: format_value(v) for k, v in self.as_dict().items()}

    @classmethod
    def from_record(cls, record):
        return cls(**{k: parse_value(record[k]) for k in METRIC_KEYS})


def format_value(v):
    return UNDEFINED if v is None else f"{v:.4f}"


def parse_value(text):
    return None if text == UNDEFINED else float(text)


def _ratio(num, den):
    return None if den == 0 else Fraction(num, den)


def confusion_from_predictions(predicted, actual, positive_class=1):
    predicted = np.asarray(predicted)
    actual = np.asarray(actual)
    if predicted.shape != actual.shape:
        raise DataError(f"length mismatch: {predicted.shape} predictions vs {actual.shape} labels")
    if predicted.size == 0:
        raise DataError("cannot score an empty prediction vector")
    pp = predicted == positive_class
    ap = actual == positive_class
    return ConfusionMatrix(tp=int(np.sum(pp & ap)), tn=int(np.sum(~pp & ~ap)),
                           fp=int(np.sum(pp & ~ap)), fn=int(np.sum(~pp & ap)))


def exact_metrics(cm):
    """The metric values as exact fractions (``None`` where undefined)."""
    tp, tn, fp, fn = cm.tp, cm.tn, cm.fp, cm.fn
    precision = _ratio(tp, tp + fp)
    recall = _ratio(tp, tp + fn)
    if precision is None or recall is None or precision + recall == 0:
        f1 = None
    else:
        f1 = 2 * precision * recall / (precision + recall)
    # both terms divide by a sum with fp, exactly as the formula is printed
    first, second = _ratio(tp, tp + fp), _ratio(tn, tn + fp)
    auc_paper = None if first is None or second is None else (first + second) / 2
    return {
        "accuracy": _ratio(tp + tn, cm.total),
        "precision": precision,
        "recall": recall,
        "f1": f1,
        "fpr": _ratio(fp, fp + tn),
        "auc_paper": auc_paper,
    }


def metrics_from_confusion(cm, auc_roc_value=None):
    values = {k: None if v is None else float(v) for k, v in exact_metrics(cm).items()}
    return MetricsReport(auc_roc=auc_roc_value, **values)


def auc_roc(scores, actual, positive_class=1):
    """Mann-Whitney AUC: P(random positive outscores random negative), ties count 1/2.

    Returns ``None`` unless both classes are present.
    """
    scores = np.asarray(scores, dtype=np.float64)
    pos = np.asarray(actual) == positive_class
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if scores.shape != pos.shape:
        raise DataError("scores and labels differ in length")
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)  # average ranks: multiples of 1/2, exact in binary
    u = ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0
    return float(Fraction(u) / (n_pos * n_neg))


def evaluate(model, dataset, positive_class=1):
    """Score ``model`` on ``dataset``; auc_roc ranks by the positive-class probability."""
    probs = model.forward(dataset.features)
    predicted = np.argmax(probs, axis=1)
    cm = confusion_from_predictions(predicted, dataset.labels, positive_class)
    return metrics_from_confusion(cm, auc_roc(probs[:, positive_class], dataset.labels,
                                              positive_class))
