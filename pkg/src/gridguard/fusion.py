"""Combine detector, classifier and graph evidence into one risk score per node."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import EmptyScores, InvalidWeights, UsageError

DEFAULT_WEIGHTS = (1 / 3, 1 / 3, 1 / 3)
REPORT_COLUMNS = ("node", "horizon", "ts_score_norm", "clf_prob", "graph_prob", "unified_risk",
                  "w_ts", "w_clf", "w_graph")


def validate_weights(weights) -> tuple[float, float, float]:
    w = tuple(float(x) for x in weights)
    if len(w) != 3 or any(not np.isfinite(x) or x < 0 for x in w) or abs(sum(w) - 1.0) > 1e-9:
        raise InvalidWeights(f"weights must be three nonnegative numbers summing to 1, got {weights}")
    return w


def drop_component(weights, index: int) -> tuple[float, float, float]:
    """Zero one weight and spread its mass over the rest in proportion."""
    w = list(validate_weights(weights))
    rest = sum(x for i, x in enumerate(w) if i != index)
    if rest <= 0:
        raise InvalidWeights("no weight left after dropping a component")
    return tuple(0.0 if i == index else x / rest for i, x in enumerate(w))


def normalize_scores(scores, value_range: tuple[float, float] | None = None) -> np.ndarray:
    """Min-max scaling to [0, 1]; a constant batch maps to 0.5.

    With ``value_range`` the bounds are fixed (for example calibrated on training
    data) and values outside them are clipped.
    """
    s = np.asarray(scores, float)
    if s.size == 0:
        raise EmptyScores("no scores to normalize")
    lo, hi = (s.min(), s.max()) if value_range is None else value_range
    if hi <= lo:
        return np.full(s.shape, 0.5)
    return np.clip((s - lo) / (hi - lo), 0.0, 1.0)


def unified_risk(ts_norm, clf_prob, graph_prob, weights=DEFAULT_WEIGHTS):
    w_ts, w_clf, w_graph = validate_weights(weights)
    parts = [np.asarray(p, float) for p in (ts_norm, clf_prob, graph_prob)]
    if any(((p < 0) | (p > 1)).any() for p in parts):
        raise UsageError("risk components must lie in [0, 1]")
    risk = w_ts * parts[0] + w_clf * parts[1] + w_graph * parts[2]
    risk = np.clip(risk, 0.0, 1.0)
    return float(risk) if risk.ndim == 0 else risk


@dataclass(frozen=True)
class RiskRecord:
    node: str
    horizon: str
    ts_score_norm: float
    clf_prob: float
    graph_prob: float
    unified_risk: float
    w_ts: float
    w_clf: float
    w_graph: float


def fuse(nodes: Sequence[str], ts_raw, clf_prob, graph_prob, weights=DEFAULT_WEIGHTS,
         horizon: str = "test", value_range=None) -> list[RiskRecord]:
    """Records for a batch of nodes; raw detector scores are normalized within the batch."""
    w = validate_weights(weights)
    ts = normalize_scores(ts_raw, value_range)
    clf = np.asarray(clf_prob, float)
    graph = np.asarray(graph_prob, float)
    risk = unified_risk(ts, clf, graph, w)
    return [RiskRecord(str(n), horizon, float(ts[i]), float(clf[i]), float(graph[i]), float(risk[i]), *w)
            for i, n in enumerate(nodes)]


@dataclass
class RiskReport:
    ranked: list[RiskRecord]
    flagged: list[RiskRecord]
    top_k: list[RiskRecord]
    threshold: float

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame([asdict(r) for r in self.ranked], columns=list(REPORT_COLUMNS))

    def to_json(self) -> str:
        doc = {
            "threshold": self.threshold,
            "n_nodes": len(self.ranked),
            "flagged": [r.node for r in self.flagged],
            "top_k": [asdict(r) for r in self.top_k],
            "ranked": [asdict(r) for r in self.ranked],
        }
        return json.dumps(doc, indent=2, sort_keys=True)


def risk_report(records: Sequence[RiskRecord], threshold: float = 0.5, k: int = 10) -> RiskReport:
    if not records:
        raise EmptyScores("risk report needs at least one record")
    ranked = sorted(records, key=lambda r: (-r.unified_risk, r.node))
    flagged = [r for r in ranked if r.unified_risk > threshold]
    return RiskReport(ranked, flagged, ranked[:max(k, 0)], threshold)
