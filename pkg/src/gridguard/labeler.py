"""Four-condition rule labeling with reason codes."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Mapping

import numpy as np
import pandas as pd

from .errors import UsageError
from .features import FeatureFrame

IMBALANCE = "IMBALANCE"
VOLTAGE = "VOLTAGE"
POWER_FACTOR = "POWER_FACTOR"
FAULT = "FAULT"
REASONS = (FAULT, IMBALANCE, POWER_FACTOR, VOLTAGE)  # sorted
_BIT = {r: 1 << i for i, r in enumerate(REASONS)}

IDLE_POWER_KW = 0.05
# values within this distance of a threshold count as sitting on it, not past it
_BOUNDARY_RTOL = 1e-9
_BOUNDARY_ATOL = 1e-12


@dataclass(frozen=True)
class RuleThresholds:
    imbalance_frac: float = 0.10
    voltage_band_frac: float = 0.10
    pf_min: float = 0.85
    fault_rule: str = "fault_without_overcurrent"

    def __post_init__(self):
        if not 0 < self.imbalance_frac < 1 or not 0 < self.voltage_band_frac < 1:
            raise UsageError("imbalance_frac and voltage_band_frac must lie in (0, 1)")
        if not 0 < self.pf_min <= 1:
            raise UsageError("pf_min must lie in (0, 1]")
        if self.fault_rule != "fault_without_overcurrent":
            raise UsageError(f"unknown fault_rule {self.fault_rule!r}")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class LabeledInterval:
    meter_id: str
    index: int
    label: int
    reasons: frozenset

    def reason_string(self) -> str:
        return "|".join(sorted(self.reasons))


def _exceeds(value, limit):
    return value > limit * (1.0 + _BOUNDARY_RTOL) + _BOUNDARY_ATOL


def _below(value, limit):
    return value < limit * (1.0 - _BOUNDARY_RTOL)


def current_band(current_a) -> tuple[float, float]:
    """Normal current band of a meter: median +/- 2 IQR."""
    c = np.asarray(current_a, dtype=float)
    q1, med, q3 = np.percentile(c, [25, 50, 75])
    iqr = q3 - q1
    return float(med - 2 * iqr), float(med + 2 * iqr)


def reason_mask(imbalance_kw, total_supply_kw, voltage_v, power_factor, power_kw,
                fault_flag, current_a, nominal_voltage_v: float, th: RuleThresholds,
                band: tuple[float, float]) -> np.ndarray:
    """Bitmask of fired conditions (bit order follows ``REASONS``); works on scalars or arrays."""
    imb = np.abs(np.asarray(imbalance_kw, float))
    supply = np.asarray(total_supply_kw, float)
    mask = np.zeros(np.broadcast(imb, supply).shape, dtype=np.int64)
    mask = mask | np.where(_exceeds(imb, th.imbalance_frac * np.abs(supply)), _BIT[IMBALANCE], 0)
    dv = np.abs(np.asarray(voltage_v, float) - nominal_voltage_v)
    mask = mask | np.where(_exceeds(dv, th.voltage_band_frac * nominal_voltage_v), _BIT[VOLTAGE], 0)
    pf_low = _below(np.asarray(power_factor, float), th.pf_min) & (np.asarray(power_kw, float) > IDLE_POWER_KW)
    mask = mask | np.where(pf_low, _BIT[POWER_FACTOR], 0)
    cur = np.asarray(current_a, float)
    normal_current = (cur >= band[0]) & (cur <= band[1])
    fault = (np.asarray(fault_flag, float) > 0.5) & normal_current
    mask = mask | np.where(fault, _BIT[FAULT], 0)
    return mask


def reasons_from_mask(mask: int) -> frozenset:
    return frozenset(r for r in REASONS if int(mask) & _BIT[r])


def label_interval(row: Mapping[str, float], nominal_voltage_v: float, th: RuleThresholds,
                   band: tuple[float, float] = (-np.inf, np.inf), meter_id: str = "",
                   index: int = 0) -> LabeledInterval:
    """Label one feature row.

    ``band`` is the meter's normal current band (see :func:`current_band`); the
    fault condition fires when a fault is reported while current sits inside it.
    """
    mask = int(reason_mask(row["imbalance_kw"], row["total_supply_kw"], row["voltage_v"],
                           row["power_factor"], row["power_kw"], row.get("fault_flag", 0.0),
                           row.get("current_a", 0.0), nominal_voltage_v, th, band))
    reasons = reasons_from_mask(mask)
    return LabeledInterval(meter_id, index, int(bool(reasons)), reasons)


def label_arrays(frame: FeatureFrame, nominal_voltage_v: float,
                 th: RuleThresholds) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized labels: ``(label int8 array, reason bitmask array)``."""
    if len(frame) == 0:
        return np.zeros(0, dtype=np.int8), np.zeros(0, dtype=np.int64)
    band = current_band(frame["current_a"])
    mask = reason_mask(frame["imbalance_kw"], frame["total_supply_kw"], frame["voltage_v"],
                       frame["power_factor"], frame["power_kw"], frame["fault_flag"],
                       frame["current_a"], nominal_voltage_v, th, band)
    return (mask > 0).astype(np.int8), mask


def label_series(frame: FeatureFrame, nominal_voltage_v: float, th: RuleThresholds) -> list[LabeledInterval]:
    labels, mask = label_arrays(frame, nominal_voltage_v, th)
    return [LabeledInterval(frame.meter_id, i, int(labels[i]), reasons_from_mask(mask[i]))
            for i in range(len(labels))]


def labels_to_frame(labels: Mapping[str, tuple[np.ndarray, np.ndarray]]) -> pd.DataFrame:
    names = np.array(["|".join(sorted(reasons_from_mask(x))) for x in range(1 << len(REASONS))], dtype=object)
    parts = []
    for m in sorted(labels):
        lab, mask = labels[m]
        parts.append(pd.DataFrame({
            "meter_id": m,
            "index": np.arange(len(lab)),
            "label": lab.astype(int),
            "reasons": names[np.asarray(mask, dtype=np.int64)],
        }))
    return pd.concat(parts, ignore_index=True)


def read_labels(path) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    df = pd.read_csv(path, dtype={"meter_id": str, "reasons": str}, keep_default_na=False)
    out = {}
    for m, g in df.groupby("meter_id", sort=True):
        g = g.sort_values("index")
        mask = np.array([sum(_BIT[r] for r in s.split("|") if r) for s in g["reasons"]], dtype=np.int64)
        out[m] = (g["label"].to_numpy(dtype=np.int8), mask)
    return out
