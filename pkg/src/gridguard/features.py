"""Engineered features: supply/demand balance, loss percentage, multi-scale
rolling statistics, environmental interactions and apparent power."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import EmptySeries, MissingChannel, UsageError
from .tables import write_frame
from .telemetry import BOOLEAN_CHANNELS, NUMERIC_CHANNELS, MeterSeries

FRAME_VERSION = "1"

# rolling windows in 15-minute samples: 1 h, 6 h, 24 h
WINDOWS = {"1h": 4, "6h": 24, "24h": 96}

LOSS_EPS_KW = 1e-9
TEMP_REF_C = 20.0
TEMP_SCALE_C = 40.0

PASS_THROUGH = NUMERIC_CHANNELS + BOOLEAN_CHANNELS
DERIVED = (
    "total_supply_kw",
    "total_demand_kw",
    "imbalance_kw",
    "loss_pct",
    "roll_mean_1h",
    "roll_std_1h",
    "roll_mean_6h",
    "roll_std_6h",
    "roll_mean_24h",
    "roll_std_24h",
    "temp_adj_consumption",
    "humidity_adj_consumption",
    "price_weighted_consumption",
    "apparent_power_kva",
)
FRAME_COLUMNS = PASS_THROUGH + DERIVED


def total_supply(grid_supply_kw, solar_kw, wind_kw):
    return np.add(np.add(grid_supply_kw, solar_kw), wind_kw)


def imbalance(total_supply_kw, total_demand_kw):
    """Supply minus demand; positive values mean energy unaccounted for at the meter."""
    return np.subtract(total_supply_kw, total_demand_kw)


def loss_percentage(grid_supply_kw, power_kw):
    """Fraction of grid supply not registered by the meter; 0 where supply <= 1e-9 kW."""
    g = np.asarray(grid_supply_kw, dtype=float)
    p = np.asarray(power_kw, dtype=float)
    safe = np.where(g > LOSS_EPS_KW, g, 1.0)
    out = np.where(g > LOSS_EPS_KW, (g - p) / safe, 0.0)
    return out if out.ndim else float(out)


def rolling_stats(series, window_len: int) -> tuple[np.ndarray, np.ndarray]:
    """Trailing mean and population std over ``window_len`` samples.

    The window includes the current sample. The first ``window_len - 1``
    outputs use the available prefix instead of being left undefined.
    """
    x = np.asarray(series, dtype=float)
    if x.ndim != 1 or len(x) == 0:
        raise EmptySeries("rolling_stats needs a non-empty 1-D series")
    if window_len < 1:
        raise UsageError("window_len must be >= 1")
    n = len(x)
    if window_len == 1:
        return x.copy(), np.zeros(n)
    # centring first keeps the E[x^2] - E[x]^2 difference well conditioned
    c = x - x.mean()
    s1 = np.concatenate([[0.0], np.cumsum(c)])
    s2 = np.concatenate([[0.0], np.cumsum(c * c)])
    hi = np.arange(1, n + 1)
    lo = np.maximum(hi - window_len, 0)
    cnt = hi - lo
    m = (s1[hi] - s1[lo]) / cnt
    var = (s2[hi] - s2[lo]) / cnt - m * m
    std = np.sqrt(np.maximum(var, 0.0))
    return m + x.mean(), std


def apparent_power(p_kw, q_kvar):
    return np.hypot(p_kw, q_kvar)


def environmental_features(power_kw, temperature_c, humidity_pct, price):
    """(temperature-adjusted, humidity-adjusted, price-weighted) consumption."""
    p = np.asarray(power_kw, dtype=float)
    temp_adj = p * (1.0 + (np.asarray(temperature_c) - TEMP_REF_C) / TEMP_SCALE_C)
    humidity_adj = p * (np.asarray(humidity_pct) / 100.0)
    price_weighted = p * np.asarray(price)
    return temp_adj, humidity_adj, price_weighted


@dataclass
class FeatureFrame:
    meter_id: str
    columns: dict[str, np.ndarray]

    def __len__(self) -> int:
        return len(self.columns["power_kw"])

    def __getitem__(self, name: str) -> np.ndarray:
        return self.columns[name]

    def row(self, i: int) -> dict[str, float]:
        return {k: float(v[i]) for k, v in self.columns.items()}

    def matrix(self, names) -> np.ndarray:
        return np.column_stack([self.columns[n] for n in names])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({"meter_id": self.meter_id, "interval_index": np.arange(len(self))})
        for name in FRAME_COLUMNS:
            df[name] = self.columns[name]
        return df


def build_frame(series: MeterSeries, transformer_supply=None) -> FeatureFrame:
    """Compute every feature column (order: ``FRAME_COLUMNS``) for one imputed meter series.

    ``transformer_supply``, when given, replaces the meter's ``grid_supply_kw``
    as the upstream supply for balance and loss features.
    """
    ch = series.channels
    missing = [c for c in PASS_THROUGH if c not in ch]
    if missing:
        raise MissingChannel(f"meter {series.meter_id} lacks channels {missing}")
    if series.has_missing():
        raise UsageError(f"meter {series.meter_id} has gaps; impute before building features")

    cols = {c: np.asarray(ch[c], dtype=float) for c in PASS_THROUGH}
    power = cols["power_kw"]
    grid = cols["grid_supply_kw"] if transformer_supply is None else np.asarray(transformer_supply, float)
    if len(grid) != len(power):
        raise UsageError("transformer_supply must align with the meter series")

    cols["total_supply_kw"] = total_supply(grid, cols["solar_kw"], cols["wind_kw"])
    cols["total_demand_kw"] = power.copy()
    cols["imbalance_kw"] = imbalance(cols["total_supply_kw"], cols["total_demand_kw"])
    cols["loss_pct"] = loss_percentage(grid, power)
    for tag, w in WINDOWS.items():
        cols[f"roll_mean_{tag}"], cols[f"roll_std_{tag}"] = rolling_stats(power, w)
    (cols["temp_adj_consumption"], cols["humidity_adj_consumption"],
     cols["price_weighted_consumption"]) = environmental_features(
        power, cols["temperature_c"], cols["humidity_pct"], cols["price_per_kwh"])
    cols["apparent_power_kva"] = apparent_power(power, cols["reactive_kvar"])
    return FeatureFrame(series.meter_id, {c: cols[c] for c in FRAME_COLUMNS})


def write_frames(frames: dict[str, FeatureFrame], path) -> None:
    """CSV with header ``meter_id,interval_index,<FRAME_COLUMNS>``; first line carries the version."""
    df = pd.concat([frames[m].to_frame() for m in sorted(frames)], ignore_index=True)
    write_frame(df, path, preamble=f"# gridguard-features v{FRAME_VERSION}")


def read_frames(path) -> dict[str, FeatureFrame]:
    with open(path, encoding="utf-8") as fh:
        first = fh.readline().strip()
        if first != f"# gridguard-features v{FRAME_VERSION}":
            raise UsageError(f"{path}: not a v{FRAME_VERSION} feature file")
        df = pd.read_csv(fh, dtype={"meter_id": str}, float_precision="round_trip")
    missing = [c for c in FRAME_COLUMNS if c not in df.columns]
    if missing:
        raise MissingChannel(f"{path}: missing feature columns {missing}")
    out = {}
    for m, g in df.groupby("meter_id", sort=True):
        g = g.sort_values("interval_index")
        out[m] = FeatureFrame(m, {c: g[c].to_numpy(dtype=float) for c in FRAME_COLUMNS})
    return out
