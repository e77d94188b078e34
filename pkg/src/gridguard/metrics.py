"""Classification metrics: confusion counts, accuracy/precision/recall/F1, rank-based ROC-AUC."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import EmptyInput, LengthMismatch, SingleClass, UsageError

TABLE_COLUMNS = ("Model", "Accuracy", "F1 Score", "ROC-AUC")


def _binary(a, name):
    a = np.asarray(a)
    if not np.isin(a, (0, 1)).all():
        raise UsageError(f"{name} must contain only 0/1 values")
    return a.astype(np.int8)


@dataclass(frozen=True)
class ConfusionMatrix:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def total(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.total

    # zero-denominator convention: precision, recall and F1 are 0

    @property
    def precision(self) -> float:
        d = self.tp + self.fp
        return self.tp / d if d else 0.0

    @property
    def recall(self) -> float:
        d = self.tp + self.fn
        return self.tp / d if d else 0.0

    @property
    def f1(self) -> float:
        d = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / d if self.tp else 0.0

    @property
    def false_positive_rate(self) -> float:
        d = self.fp + self.tn
        return self.fp / d if d else 0.0

    def to_dict(self) -> dict:
        d = asdict(self)
        d.update(accuracy=self.accuracy, precision=self.precision, recall=self.recall, f1=self.f1)
        return d


def confusion(y_true, y_pred) -> ConfusionMatrix:
    t = _binary(y_true, "y_true")
    p = _binary(y_pred, "y_pred")
    if t.shape != p.shape:
        raise LengthMismatch(f"y_true has {t.size} entries, y_pred {p.size}")
    if t.size == 0:
        raise EmptyInput("no samples to evaluate")
    return ConfusionMatrix(
        tp=int(np.sum((t == 1) & (p == 1))),
        fp=int(np.sum((t == 0) & (p == 1))),
        tn=int(np.sum((t == 0) & (p == 0))),
        fn=int(np.sum((t == 1) & (p == 0))),
    )


def roc_auc(y_true, scores) -> float:
    """Mann-Whitney estimate of P(score_pos > score_neg), ties counted half."""
    t = _binary(y_true, "y_true")
    s = np.asarray(scores, float)
    if t.shape != s.shape:
        raise LengthMismatch("labels and scores differ in length")
    if not np.isfinite(s).all():
        raise UsageError("scores must be finite")
    n_pos = int(t.sum())
    n_neg = t.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise SingleClass("ROC-AUC needs both classes")
    ranks = rankdata(s, method="average")
    u = ranks[t == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def evaluate(y_true, y_pred, scores=None) -> dict:
    """Metric block for one model; ``roc_auc`` is None without scores or with a single class."""
    cm = confusion(y_true, y_pred)
    out = cm.to_dict()
    out["roc_auc"] = None
    if scores is not None:
        try:
            out["roc_auc"] = roc_auc(y_true, scores)
        except SingleClass:
            pass
    return out


def table_row(model: str, block: dict) -> dict:
    """One row in model-comparison column order."""
    return {"Model": model, "Accuracy": block["accuracy"], "F1 Score": block["f1"],
            "ROC-AUC": block["roc_auc"]}


def to_json(blocks: dict) -> str:
    return json.dumps(blocks, indent=2, sort_keys=True)
