"""Edge-matching disaggregation of one cyclic two-state appliance."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np
import pandas as pd

from .errors import EmptyHistory, UsageError


@dataclass(frozen=True)
class ApplianceModel:
    rated_power_kw: float
    tolerance_frac: float = 0.25
    min_on_duration: int = 1
    min_off_duration: int = 1

    def __post_init__(self):
        if not self.rated_power_kw > 0:
            raise UsageError("rated_power_kw must be > 0")
        if not 0 < self.tolerance_frac < 1:
            raise UsageError("tolerance_frac must lie in (0, 1)")
        if self.min_on_duration < 1 or self.min_off_duration < 1:
            raise UsageError("minimum durations must be >= 1")


@dataclass
class DisaggResult:
    aggregate: np.ndarray
    state: np.ndarray  # bool
    appliance_power: np.ndarray
    residual: np.ndarray

    def __len__(self) -> int:
        return len(self.state)

    @property
    def duty_cycle(self) -> float:
        return float(self.state.mean()) if len(self.state) else 0.0

    @property
    def mean_on_length(self) -> float:
        lengths = [n for value, _, n in runs(self.state) if value]
        return float(np.mean(lengths)) if lengths else 0.0

    def to_frame(self) -> pd.DataFrame:
        return pd.DataFrame({
            "index": np.arange(len(self.state)),
            "aggregate": self.aggregate,
            "state": self.state.astype(int),
            "appliance_power": self.appliance_power,
            "residual": self.residual,
        })


def runs(state) -> list[tuple[bool, int, int]]:
    """Run-length encoding as ``(value, start, length)``."""
    s = np.asarray(state, bool)
    if s.size == 0:
        return []
    cuts = np.flatnonzero(s[1:] != s[:-1]) + 1
    starts = np.concatenate([[0], cuts])
    ends = np.concatenate([cuts, [s.size]])
    return [(bool(s[a]), int(a), int(b - a)) for a, b in zip(starts, ends)]


def detect_edges(aggregate, model: ApplianceModel) -> np.ndarray:
    """+1 where a step matches switching on, -1 switching off, 0 elsewhere.

    ``edges[i]`` describes the step from ``aggregate[i-1]`` to ``aggregate[i]``.
    """
    x = np.asarray(aggregate, float)
    edges = np.zeros(x.size, dtype=np.int8)
    if x.size < 2:
        return edges
    d = np.diff(x)
    r, tol = model.rated_power_kw, model.tolerance_frac * model.rated_power_kw
    edges[1:][np.abs(d - r) <= tol] = 1
    edges[1:][np.abs(d + r) <= tol] = -1
    return edges


def _enforce_min_durations(state: np.ndarray, min_on: int, min_off: int) -> np.ndarray:
    s = state.copy()
    # short on-runs are dropped first, then short off-gaps between on-runs are bridged
    for value, start, n in runs(s):
        if value and n < min_on:
            s[start:start + n] = False
    rs = runs(s)
    for k, (value, start, n) in enumerate(rs):
        if not value and 0 < k < len(rs) - 1 and n < min_off:
            s[start:start + n] = True
    return s


def disaggregate_cyclic(aggregate, model: ApplianceModel) -> DisaggResult:
    x = np.asarray(aggregate, float)
    if x.size and (not np.isfinite(x).all() or (x < 0).any()):
        raise UsageError("aggregate must be finite and nonnegative")
    edges = detect_edges(x, model)
    state = np.zeros(x.size, dtype=bool)
    matched = np.flatnonzero(edges)
    on = bool(matched.size and edges[matched[0]] < 0)
    prev = 0
    for i in matched:
        state[prev:i] = on
        if edges[i] > 0:
            on = True
        elif edges[i] < 0:
            on = False
        prev = i
    state[prev:] = on
    state = _enforce_min_durations(state, model.min_on_duration, model.min_off_duration)
    appliance = model.rated_power_kw * state
    return DisaggResult(x, state, appliance, x - appliance)


def signature_deviation(result: DisaggResult, history: Sequence[DisaggResult]) -> float:
    """Distance of the current duty cycle and mean on-run length from the history medians.

    The length term is relative; a zero historical median falls back to an
    absolute difference in intervals.
    """
    if not history:
        raise EmptyHistory("signature_deviation needs at least one historical result")
    duty_ref = float(np.median([h.duty_cycle for h in history]))
    len_ref = float(np.median([h.mean_on_length for h in history]))
    term_len = abs(result.mean_on_length - len_ref) / (len_ref if len_ref > 0 else 1.0)
    return abs(result.duty_cycle - duty_ref) + term_len


def write_result(result: DisaggResult, path) -> None:
    result.to_frame().to_csv(path, index=False)
