"""Meter CSV ingestion, 15-minute resampling and per-meter imputation."""

from __future__ import annotations

import dataclasses
import io
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import IO, Iterable, Mapping

import numpy as np
import pandas as pd

from .errors import AllMissingChannel, DataError, EmptyInput, MissingColumn, NoRecords
from .tables import write_frame

logger = logging.getLogger(__name__)

STEP_SECONDS = 900

NUMERIC_CHANNELS = (
    "power_kw",
    "voltage_v",
    "current_a",
    "power_factor",
    "reactive_kvar",
    "grid_supply_kw",
    "solar_kw",
    "wind_kw",
    "temperature_c",
    "humidity_pct",
    "price_per_kwh",
)
BOOLEAN_CHANNELS = ("fault_flag",)
CATEGORICAL_CHANNELS = ("tariff_class",)
REQUIRED_COLUMNS = ("meter_id", "timestamp", "power_kw")

# channels whose physical value cannot be negative
_NONNEGATIVE = {"power_kw", "current_a", "grid_supply_kw", "solar_kw", "wind_kw"}

_TRUE = {"1", "true", "t", "yes", "y"}
_FALSE = {"0", "false", "f", "no", "n"}
MISSING_TOKENS = ("", "NaN")


def default_schema() -> dict[str, str]:
    """Identity column map: canonical field name -> CSV column name."""
    names = ("meter_id", "timestamp", "transformer_id") + NUMERIC_CHANNELS
    names += BOOLEAN_CHANNELS + CATEGORICAL_CHANNELS
    return {n: n for n in names}


@dataclass
class RawRecord:
    meter_id: str
    timestamp: datetime
    power_kw: float | None = None
    voltage_v: float | None = None
    current_a: float | None = None
    power_factor: float | None = None
    reactive_kvar: float | None = None
    grid_supply_kw: float | None = None
    solar_kw: float | None = None
    wind_kw: float | None = None
    temperature_c: float | None = None
    humidity_pct: float | None = None
    price_per_kwh: float | None = None
    fault_flag: bool | None = None
    tariff_class: str | None = None
    transformer_id: str | None = None


@dataclass
class MeterSeries:
    """Uniform 15-minute series for one meter.

    Numeric and boolean channels live in ``channels`` as float arrays (NaN marks
    a gap, booleans are 0.0/1.0); categorical channels live in ``categorical``
    as object arrays with ``None`` for gaps.
    """

    meter_id: str
    start: datetime
    channels: dict[str, np.ndarray]
    categorical: dict[str, np.ndarray] = field(default_factory=dict)
    imputed_mask: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = STEP_SECONDS

    def __len__(self) -> int:
        for arr in self.channels.values():
            return len(arr)
        for arr in self.categorical.values():
            return len(arr)
        return 0

    @property
    def start_epoch(self) -> int:
        return int(self.start.timestamp())

    def epoch_seconds(self) -> np.ndarray:
        return self.start_epoch + self.step * np.arange(len(self), dtype=np.int64)

    def copy(self) -> "MeterSeries":
        return dataclasses.replace(
            self,
            channels={k: v.copy() for k, v in self.channels.items()},
            categorical={k: v.copy() for k, v in self.categorical.items()},
            imputed_mask={k: v.copy() for k, v in self.imputed_mask.items()},
        )

    def has_missing(self) -> bool:
        if any(np.isnan(v).any() for v in self.channels.values()):
            return True
        return any((v == None).any() for v in self.categorical.values())  # noqa: E711


def _parse_bool(value) -> float:
    if value is None:
        return np.nan
    s = str(value).strip().lower()
    if s in _TRUE:
        return 1.0
    if s in _FALSE:
        return 0.0
    return np.nan


def _parse_float(v) -> float:
    try:
        return float(v)
    except (TypeError, ValueError):
        return np.nan


def _parse_numeric(cells: np.ndarray) -> np.ndarray:
    """Exact decimal-to-double parsing; unparseable cells become NaN."""
    cells = np.where(pd.isna(cells), "nan", cells)
    try:
        return np.asarray(cells, dtype=float)
    except ValueError:
        return np.array([_parse_float(v) for v in cells], dtype=float)


def _coerce_frame(df: pd.DataFrame, schema: Mapping[str, str]) -> pd.DataFrame:
    """Rename mapped columns to canonical names and coerce every cell.

    Unparseable numeric cells become NaN; out-of-domain values (negative power,
    power factor outside [0, 1], non-positive voltage) are treated as missing.
    """
    for name in REQUIRED_COLUMNS:
        col = schema.get(name, name)
        if col not in df.columns:
            raise MissingColumn(f"required column {col!r} (field {name!r}) not in header")
    if len(df) == 0:
        raise EmptyInput("CSV has a header but no data rows")

    out = pd.DataFrame(index=df.index)
    meter = df[schema.get("meter_id", "meter_id")].astype(str).str.strip()
    if (meter == "").any():
        row = int(np.flatnonzero((meter == "").to_numpy())[0])
        raise DataError(f"empty meter_id in data row {row}")
    out["meter_id"] = meter

    ts_col = df[schema.get("timestamp", "timestamp")]
    ts = pd.to_datetime(ts_col, utc=True, format="ISO8601", errors="coerce")
    if ts.isna().any():
        row = int(np.flatnonzero(ts.isna().to_numpy())[0])
        raise DataError(f"unparseable timestamp {ts_col.iloc[row]!r} in data row {row}")
    out["timestamp"] = ts

    for name in NUMERIC_CHANNELS:
        col = schema.get(name, name)
        if col in df.columns:
            vals = _parse_numeric(df[col].to_numpy(dtype=object))
            vals = np.where(np.isfinite(vals), vals, np.nan)
        else:
            vals = np.full(len(df), np.nan)
        if name in _NONNEGATIVE:
            vals = np.where(vals < 0, np.nan, vals)
        if name == "power_factor":
            vals = np.where((vals < 0) | (vals > 1), np.nan, vals)
        if name == "voltage_v":
            vals = np.where(vals <= 0, np.nan, vals)
        out[name] = vals

    for name in BOOLEAN_CHANNELS:
        col = schema.get(name, name)
        if col in df.columns:
            out[name] = [_parse_bool(v) for v in df[col].to_numpy()]
        else:
            out[name] = np.nan

    for name in CATEGORICAL_CHANNELS + ("transformer_id",):
        col = schema.get(name, name)
        if col in df.columns:
            vals = df[col].to_numpy(dtype=object)
            out[name] = [None if (v is None or str(v).strip() in MISSING_TOKENS) else str(v).strip()
                         for v in vals]
        else:
            out[name] = None
    return out


def read_frame(source, schema: Mapping[str, str] | None = None) -> pd.DataFrame:
    """Read a meter CSV (path, text or byte stream) into a canonical, coerced frame."""
    schema = dict(default_schema(), **(schema or {}))
    if isinstance(source, (bytes, bytearray)):
        source = io.BytesIO(source)
    df = pd.read_csv(
        source,
        dtype=str,
        keep_default_na=False,
        na_values=list(MISSING_TOKENS),
        encoding="utf-8",
    )
    df = df.astype(object).where(df.notna(), None)
    return _coerce_frame(df, schema)


def parse_csv(stream: IO | bytes | str, schema: Mapping[str, str] | None = None) -> list[RawRecord]:
    """Parse a meter CSV into one :class:`RawRecord` per data row, in file order."""
    frame = read_frame(stream, schema)
    records = []
    cols = list(frame.columns)
    for row in frame.itertuples(index=False, name=None):
        kw = dict(zip(cols, row))
        kw["timestamp"] = kw["timestamp"].to_pydatetime()
        for name in NUMERIC_CHANNELS:
            v = kw[name]
            kw[name] = None if v is None or np.isnan(v) else float(v)
        v = kw["fault_flag"]
        kw["fault_flag"] = None if v is None or np.isnan(v) else bool(v)
        records.append(RawRecord(**kw))
    return records


def _bucket_mean(buckets: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    ok = ~np.isnan(values)
    b, v = buckets[ok], values[ok]
    # fixed summation order makes the result independent of record order
    order = np.lexsort((v, b))
    b, v = b[order], v[order]
    sums = np.bincount(b, weights=v, minlength=n)
    counts = np.bincount(b, minlength=n)
    out = np.full(n, np.nan)
    has = counts > 0
    out[has] = sums[has] / counts[has]
    # a mean can leave [min, max] by one ulp; clamp to keep the bracket exact
    if has.any():
        lo = np.full(n, np.inf)
        hi = np.full(n, -np.inf)
        np.minimum.at(lo, b, v)
        np.maximum.at(hi, b, v)
        out[has] = np.clip(out[has], lo[has], hi[has])
    return out


def _bucket_any(buckets: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    ok = ~np.isnan(values)
    counts = np.bincount(buckets[ok], minlength=n)
    trues = np.bincount(buckets[ok], weights=(values[ok] > 0.5).astype(float), minlength=n)
    out = np.where(trues > 0, 1.0, 0.0)
    out[counts == 0] = np.nan
    return out


def _bucket_mode(buckets: np.ndarray, values: np.ndarray, n: int) -> np.ndarray:
    out = np.full(n, None, dtype=object)
    groups: dict[int, list[str]] = {}
    for b, v in zip(buckets.tolist(), values.tolist()):
        if v is not None:
            groups.setdefault(b, []).append(v)
    for b, vals in groups.items():
        out[b] = _mode(vals)
    return out


def _mode(values: Iterable):
    counts: dict = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return sorted(k for k, c in counts.items() if c == best)[0]


def resample_frame(frame: pd.DataFrame, meter_id: str) -> MeterSeries:
    """Resample the rows of one meter (canonical frame) onto the epoch-aligned 15-min grid."""
    rows = frame[frame["meter_id"] == meter_id]
    if len(rows) == 0:
        raise NoRecords(f"no records for meter {meter_id!r}")
    secs = rows["timestamp"].to_numpy(dtype="datetime64[s]").astype(np.int64)
    bucket_abs = np.floor_divide(secs, STEP_SECONDS)
    first = int(bucket_abs.min())
    n = int(bucket_abs.max()) - first + 1
    b = (bucket_abs - first).astype(np.int64)

    channels = {}
    for name in NUMERIC_CHANNELS:
        channels[name] = _bucket_mean(b, rows[name].to_numpy(dtype=float), n)
    for name in BOOLEAN_CHANNELS:
        channels[name] = _bucket_any(b, rows[name].to_numpy(dtype=float), n)
    categorical = {}
    for name in CATEGORICAL_CHANNELS:
        categorical[name] = _bucket_mode(b, rows[name].to_numpy(dtype=object), n)

    start = datetime.fromtimestamp(first * STEP_SECONDS, tz=timezone.utc)
    return MeterSeries(meter_id=meter_id, start=start, channels=channels, categorical=categorical)


def _records_to_frame(records: list[RawRecord]) -> pd.DataFrame:
    data = {f.name: [getattr(r, f.name) for r in records] for f in dataclasses.fields(RawRecord)}
    df = pd.DataFrame(data)
    df["timestamp"] = pd.to_datetime(df["timestamp"], utc=True)
    for name in NUMERIC_CHANNELS:
        df[name] = pd.to_numeric(df[name], errors="coerce").astype(float)
    df["fault_flag"] = [np.nan if v is None else float(bool(v)) for v in data["fault_flag"]]
    return df


def resample(records: list[RawRecord], meter_id: str) -> MeterSeries:
    """Mean-aggregate one meter's records into half-open 15-minute buckets.

    Empty buckets stay missing (NaN / None); ``fault_flag`` aggregates by OR.
    """
    mine = [r for r in records if r.meter_id == meter_id]
    if not mine:
        raise NoRecords(f"no records for meter {meter_id!r}")
    return resample_frame(_records_to_frame(mine), meter_id)


def impute(series: MeterSeries) -> MeterSeries:
    """Fill gaps with the per-meter channel median (numeric) or mode (boolean, categorical).

    Raises :class:`AllMissingChannel` for a channel without a single observation.
    Already-imputed positions stay flagged in ``imputed_mask``.
    """
    out = series.copy()
    for name, arr in series.channels.items():
        miss = np.isnan(arr)
        prev = series.imputed_mask.get(name, np.zeros(len(arr), dtype=bool))
        if miss.all():
            raise AllMissingChannel(name, series.meter_id)
        if miss.any():
            if name in BOOLEAN_CHANNELS:
                fill = _mode(arr[~miss].tolist())
            else:
                fill = float(np.median(arr[~miss]))
            out.channels[name] = np.where(miss, fill, arr)
        out.imputed_mask[name] = prev | miss
    for name, arr in series.categorical.items():
        miss = np.array([v is None for v in arr], dtype=bool)
        prev = series.imputed_mask.get(name, np.zeros(len(arr), dtype=bool))
        if miss.all():
            raise AllMissingChannel(name, series.meter_id)
        if miss.any():
            fill = _mode(arr[~miss].tolist())
            filled = arr.copy()
            filled[miss] = fill
            out.categorical[name] = filled
        out.imputed_mask[name] = prev | miss
    return out


def load_meters(source, schema: Mapping[str, str] | None = None,
                fill_absent: Iterable[str] = ("solar_kw", "wind_kw")) -> tuple[dict[str, MeterSeries], dict[str, str]]:
    """Read, resample and impute every meter in a CSV.

    Channels named in ``fill_absent`` that are entirely missing for a meter are
    set to zero (a meter without renewables); any other all-missing channel
    drops the meter with a warning. Returns ``(series_by_meter, transformer_of)``.
    """
    frame = read_frame(source, schema)
    out: dict[str, MeterSeries] = {}
    transformer_of: dict[str, str] = {}
    for meter_id, rows in frame.groupby("meter_id", sort=True):
        series = resample_frame(rows, meter_id)
        for name in fill_absent:
            if name in series.channels and np.isnan(series.channels[name]).all():
                series.channels[name] = np.zeros(len(series))
        try:
            out[meter_id] = impute(series)
        except AllMissingChannel as exc:
            logger.warning("dropping meter %s: %s", meter_id, exc)
            continue
        tids = rows["transformer_id"].dropna()
        if len(tids):
            transformer_of[meter_id] = _mode(tids.tolist())
    return out, transformer_of


def series_to_frame(series: MeterSeries, transformer_id: str | None = None) -> pd.DataFrame:
    ts = pd.to_datetime(series.epoch_seconds(), unit="s", utc=True)
    data = {"meter_id": series.meter_id}
    if transformer_id is not None:
        data["transformer_id"] = transformer_id
    df = pd.DataFrame(data, index=range(len(series)))
    df["timestamp"] = ts.strftime("%Y-%m-%dT%H:%M:%SZ")
    for name in NUMERIC_CHANNELS:
        if name in series.channels:
            df[name] = series.channels[name]
    for name in BOOLEAN_CHANNELS:
        if name in series.channels:
            vals = series.channels[name]
            df[name] = ["" if np.isnan(v) else str(int(v)) for v in vals]
    for name in CATEGORICAL_CHANNELS:
        if name in series.categorical:
            df[name] = ["" if v is None else v for v in series.categorical[name]]
    return df


def write_csv(telemetry: Mapping[str, MeterSeries], path,
              transformer_of: Mapping[str, str] | None = None) -> None:
    """Write meters in the CSV schema :func:`parse_csv` consumes (sorted by meter id)."""
    frames = [series_to_frame(telemetry[m], (transformer_of or {}).get(m)) for m in sorted(telemetry)]
    write_frame(pd.concat(frames, ignore_index=True), path)
