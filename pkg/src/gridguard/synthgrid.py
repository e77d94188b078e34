"""Seeded synthetic grids: topology, telemetry, theft injection with ground truth.

Every meter draws from its own generator keyed by (master seed, stream name,
meter id), so output does not depend on iteration order or parallelism.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Mapping

import numpy as np
import pandas as pd
from scipy.signal import lfilter

from .errors import InfeasiblePrevalence, UsageError
from .tables import write_frame
from .telemetry import STEP_SECONDS, MeterSeries

STEPS_PER_DAY = 86400 // STEP_SECONDS
DEFAULT_START = datetime(2024, 1, 1, tzinfo=timezone.utc)

SCENARIOS = ("none", "bypass", "intermittent_tap", "meter_zeroing")


def substream(seed: int, name: str, key: str = "") -> np.random.Generator:
    """Independent generator for (seed, stream name, entity key)."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF, zlib.crc32(name.encode()), zlib.crc32(key.encode())]
    return np.random.default_rng(np.random.SeedSequence(entropy))


@dataclass
class GridTopology:
    transformers: list[str]
    meters: list[str]
    edges: list[tuple[str, str]]
    nominal_voltage_v: float = 230.0

    def __post_init__(self):
        ids = self.transformers + self.meters
        if len(set(ids)) != len(ids):
            raise UsageError("node ids must be unique")
        known_t, known_m = set(self.transformers), set(self.meters)
        seen: dict[str, str] = {}
        for t, m in self.edges:
            if t not in known_t or m not in known_m:
                raise UsageError(f"edge ({t}, {m}) references an unknown node")
            if m in seen:
                raise UsageError(f"meter {m} attached to more than one transformer")
            seen[m] = t
        if set(seen) != known_m:
            raise UsageError("every meter must be attached to exactly one transformer")

    def transformer_of(self) -> dict[str, str]:
        return {m: t for t, m in self.edges}

    def meters_of(self, transformer: str) -> list[str]:
        return sorted(m for t, m in self.edges if t == transformer)

    def to_dict(self) -> dict:
        return {
            "transformers": list(self.transformers),
            "meters": list(self.meters),
            "edges": [list(e) for e in self.edges],
            "nominal_voltage_v": self.nominal_voltage_v,
        }

    @classmethod
    def from_dict(cls, d: Mapping) -> "GridTopology":
        return cls(
            transformers=list(d["transformers"]),
            meters=list(d["meters"]),
            edges=[tuple(e) for e in d["edges"]],
            nominal_voltage_v=float(d.get("nominal_voltage_v", 230.0)),
        )

    @classmethod
    def from_assignment(cls, transformer_of: Mapping[str, str], nominal_voltage_v: float = 230.0):
        transformers = sorted(set(transformer_of.values()))
        meters = sorted(transformer_of)
        return cls(transformers, meters, [(transformer_of[m], m) for m in meters], nominal_voltage_v)


def generate_topology(n_transformers: int, meters_per_transformer: int, seed: int = 0) -> GridTopology:
    """Star feeders: each transformer serves ``meters_per_transformer`` meters.

    Meter ids are assigned to transformers in a seeded shuffled order.
    """
    if n_transformers <= 0 or meters_per_transformer <= 0:
        raise UsageError("n_transformers and meters_per_transformer must be positive")
    n_meters = n_transformers * meters_per_transformer
    width = max(4, len(str(n_meters - 1)))
    transformers = [f"T{i:03d}" for i in range(n_transformers)]
    meters = [f"M{j:0{width}d}" for j in range(n_meters)]
    order = substream(seed, "topology").permutation(n_meters)
    edges = []
    for slot, j in enumerate(order):
        edges.append((transformers[slot // meters_per_transformer], meters[j]))
    edges.sort(key=lambda e: (e[0], e[1]))
    return GridTopology(transformers, meters, edges)


def _smooth_noise(rng: np.random.Generator, n: int, rho: float) -> np.ndarray:
    """Unit-variance AR(1) noise."""
    eps = rng.standard_normal(n)
    out, _ = lfilter([np.sqrt(1 - rho * rho)], [1.0, -rho], eps[1:], zi=[rho * eps[0]])
    return np.concatenate([[eps[0]], out])


def _simulate_meter(meter_id: str, n: int, seed: int, nominal_v: float, start: datetime) -> MeterSeries:
    rng = substream(seed, "telemetry", meter_id)
    t0 = start.timestamp()
    hours = ((t0 / 3600.0) + np.arange(n) * STEP_SECONDS / 3600.0)
    hour_of_day = np.mod(hours, 24.0)
    day = np.floor(hours / 24.0)
    weekday = (day.astype(np.int64) + 3) % 7  # 1970-01-01 was a Thursday

    base = rng.uniform(0.5, 3.0)
    diurnal = 1.0 + 0.35 * np.cos(2 * np.pi * (hour_of_day - 19.0) / 24.0)
    weekly = np.where(weekday >= 5, 1.1, 1.0)
    power = base * diurnal * weekly + rng.normal(0.0, 0.05 * base, n)
    power = np.maximum(power, 0.0)

    pf_mean = rng.uniform(0.90, 0.97)
    pf = np.clip(pf_mean + rng.normal(0.0, 0.01, n), 0.88, 0.99)
    reactive = power * np.tan(np.arccos(pf))
    voltage = nominal_v * (1.0 + rng.normal(0.0, 0.012, n))
    current = np.sqrt(power**2 + reactive**2) * 1000.0 / voltage

    solar_cap = rng.uniform(0.0, 0.03) * base
    clear_sky = rng.uniform(0.3, 1.0, int(day.max() - day.min()) + 1)[(day - day.min()).astype(int)]
    daylight = np.where((hour_of_day > 6.0) & (hour_of_day < 18.0),
                        np.sin(np.pi * (hour_of_day - 6.0) / 12.0) ** 2, 0.0)
    solar = solar_cap * daylight * clear_sky

    wind_cap = rng.uniform(0.0, 0.01) * base
    wind = wind_cap * np.abs(_smooth_noise(rng, n, 0.97))

    loss_frac = rng.uniform(0.01, 0.04)
    loss_t = np.maximum(loss_frac + rng.normal(0.0, 0.002, n), 0.002)
    grid_supply = power * (1.0 + loss_t)

    doy = (hours / 24.0) % 365.0
    temperature = (15.0 + 8.0 * np.sin(2 * np.pi * (doy - 100.0) / 365.0)
                   + 5.0 * np.cos(2 * np.pi * (hour_of_day - 15.0) / 24.0)
                   + rng.normal(0.0, 0.5, n))
    humidity = np.clip(60.0 - 1.5 * (temperature - 15.0) + rng.normal(0.0, 3.0, n), 10.0, 100.0)
    peak = (hour_of_day >= 17.0) & (hour_of_day < 21.0)
    price = np.where(peak, 0.30, 0.15)

    # rare fault reports; half coincide with a genuine overcurrent
    fault = rng.random(n) < 0.0005
    overcurrent = fault & (rng.random(n) < 0.5)
    current = np.where(overcurrent, current * 3.0, current)

    tariff = "commercial" if rng.random() < 0.2 else "residential"
    channels = {
        "power_kw": power,
        "voltage_v": voltage,
        "current_a": current,
        "power_factor": pf,
        "reactive_kvar": reactive,
        "grid_supply_kw": grid_supply,
        "solar_kw": solar,
        "wind_kw": wind,
        "temperature_c": temperature,
        "humidity_pct": humidity,
        "price_per_kwh": price,
        "fault_flag": fault.astype(float),
    }
    return MeterSeries(
        meter_id=meter_id,
        start=start,
        channels=channels,
        categorical={"tariff_class": np.full(n, tariff, dtype=object)},
        imputed_mask={k: np.zeros(n, dtype=bool) for k in list(channels) + ["tariff_class"]},
    )


def simulate_telemetry(topology: GridTopology, days: int, seed: int = 0,
                       start: datetime = DEFAULT_START) -> dict[str, MeterSeries]:
    """Generate ``days`` of 15-minute telemetry for every meter of ``topology``."""
    if days < 1:
        raise UsageError("days must be >= 1")
    start = start.astimezone(timezone.utc)
    if int(start.timestamp()) % STEP_SECONDS:
        raise UsageError("start must lie on a 15-minute boundary")
    n = days * STEPS_PER_DAY
    return {m: _simulate_meter(m, n, seed, topology.nominal_voltage_v, start) for m in topology.meters}


@dataclass
class ScenarioConfig:
    theft_meter_fraction: float = 0.3
    target_point_prevalence: float = 0.188
    scenario_weights: dict[str, float] = field(default_factory=lambda: {
        "bypass": 0.4, "intermittent_tap": 0.3, "meter_zeroing": 0.3})
    seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.theft_meter_fraction <= 1.0:
            raise UsageError("theft_meter_fraction must lie in [0, 1]")
        if not 0.0 <= self.target_point_prevalence <= 1.0:
            raise UsageError("target_point_prevalence must lie in [0, 1]")
        unknown = set(self.scenario_weights) - set(SCENARIOS[1:])
        if unknown:
            raise UsageError(f"unknown scenarios {sorted(unknown)}")
        if any(w < 0 for w in self.scenario_weights.values()):
            raise UsageError("scenario weights must be nonnegative")
        if abs(sum(self.scenario_weights.values()) - 1.0) > 1e-9:
            raise UsageError("scenario weights must sum to 1")


@dataclass
class TheftGroundTruth:
    flags: dict[str, np.ndarray]
    scenarios: dict[str, np.ndarray]

    def prevalence(self) -> float:
        total = sum(len(f) for f in self.flags.values())
        return sum(int(f.sum()) for f in self.flags.values()) / total if total else 0.0

    def to_frame(self) -> pd.DataFrame:
        parts = []
        for m in sorted(self.flags):
            n = len(self.flags[m])
            parts.append(pd.DataFrame({
                "meter_id": m,
                "interval_index": np.arange(n),
                "flag": self.flags[m].astype(int),
                "scenario": self.scenarios[m],
            }))
        return pd.concat(parts, ignore_index=True)

    def write_csv(self, path) -> None:
        write_frame(self.to_frame(), path)

    @classmethod
    def read_csv(cls, path) -> "TheftGroundTruth":
        df = pd.read_csv(path, dtype={"meter_id": str, "scenario": str}, keep_default_na=False)
        flags, scen = {}, {}
        for m, g in df.groupby("meter_id", sort=True):
            g = g.sort_values("interval_index")
            flags[m] = g["flag"].to_numpy(dtype=np.int8)
            scen[m] = g["scenario"].to_numpy(dtype=object)
        return cls(flags, scen)


def _tap_bursts(rng: np.random.Generator, n: int, quota: int) -> list[tuple[int, int]]:
    """Non-overlapping (start, length) bursts of 4-24 intervals covering exactly ``quota``."""
    lo, hi = 4, 24
    if quota < lo:
        lengths = np.array([quota])
    else:
        k = int(np.clip(round(quota / 14), -(-quota // hi), quota // lo))
        lengths = np.full(k, lo)
        rest = quota - lo * k
        while rest:
            room = hi - lengths
            add = np.minimum(rng.multinomial(rest, room / room.sum()), room)
            lengths += add
            rest -= int(add.sum())
    k = len(lengths)
    free = n - quota
    # k bursts need k-1 separating gaps of >= 1 interval
    if free < k - 1:
        raise InfeasiblePrevalence("intermittent-tap quota too dense for the series length")
    cuts = np.sort(rng.integers(0, free - (k - 1) + 1, size=k))
    gaps = np.diff(np.concatenate([[0], cuts])) + np.r_[0, np.ones(k - 1, dtype=int)]
    out = []
    pos = 0
    for gap, length in zip(gaps, lengths):
        pos += int(gap)
        out.append((pos, int(length)))
        pos += int(length)
    return out


def inject_theft(telemetry: Mapping[str, MeterSeries],
                 cfg: ScenarioConfig) -> tuple[dict[str, MeterSeries], TheftGroundTruth]:
    """Inject bypass, intermittent-tap and meter-zeroing theft.

    The theft meters share an interval quota sized so the realized point
    prevalence matches ``cfg.target_point_prevalence``. ``grid_supply_kw`` is
    never touched; flags are set exactly on modified intervals.
    """
    meters = sorted(telemetry)
    out = {m: telemetry[m].copy() for m in meters}
    flags = {m: np.zeros(len(telemetry[m]), dtype=np.int8) for m in meters}
    scen = {m: np.full(len(telemetry[m]), "none", dtype=object) for m in meters}
    n_theft = int(round(cfg.theft_meter_fraction * len(meters)))
    if n_theft == 0 or cfg.target_point_prevalence == 0.0:
        return out, TheftGroundTruth(flags, scen)

    rng = substream(cfg.seed, "theft-selection")
    thieves = sorted(rng.choice(meters, size=n_theft, replace=False).tolist())
    total = sum(len(telemetry[m]) for m in meters)
    quota_total = int(round(cfg.target_point_prevalence * total))
    base, extra = divmod(quota_total, n_theft)
    names = sorted(cfg.scenario_weights)
    probs = np.array([cfg.scenario_weights[s] for s in names])

    for rank, m in enumerate(thieves):
        s = out[m]
        n = len(s)
        quota = base + (1 if rank < extra else 0)
        if quota > n:
            raise InfeasiblePrevalence(
                f"target prevalence {cfg.target_point_prevalence} needs {quota} theft intervals "
                f"on meter {m} with only {n} available; raise theft_meter_fraction")
        if quota == 0:
            continue
        mrng = substream(cfg.seed, "theft", m)
        scenario = names[int(mrng.choice(len(names), p=probs))]
        ch = s.channels
        p, q, pf, v = ch["power_kw"], ch["reactive_kvar"], ch["power_factor"], ch["voltage_v"]
        if scenario in ("bypass", "meter_zeroing"):
            t0 = int(mrng.integers(0, n - quota + 1))
            sl = slice(t0, t0 + quota)
            factor = mrng.uniform(0.3, 0.7) if scenario == "bypass" else 0.0
            p[sl] *= factor
            q[sl] *= factor
            ch["current_a"][sl] *= factor
            spans = [(t0, quota)]
        else:
            spans = _tap_bursts(mrng, n, quota)
            for t0, length in spans:
                sl = slice(t0, t0 + length)
                p[sl] *= 1.0 - mrng.uniform(0.4, 0.8)
                pf[sl] = mrng.uniform(0.70, 0.84, length)
                q[sl] = p[sl] * np.tan(np.arccos(pf[sl]))
                ch["current_a"][sl] = np.sqrt(p[sl] ** 2 + q[sl] ** 2) * 1000.0 / v[sl]
        for t0, length in spans:
            flags[m][t0:t0 + length] = 1
            scen[m][t0:t0 + length] = scenario
    return out, TheftGroundTruth(flags, scen)


def refrigerator_trace(n: int, rated_kw: float = 0.15, seed: int = 0, key: str = "",
                       on_range: tuple[int, int] = (2, 4),
                       off_range: tuple[int, int] = (3, 6)) -> tuple[np.ndarray, np.ndarray]:
    """Seeded compressor duty cycle at 15-minute resolution: (power_kw, state)."""
    rng = substream(seed, "appliance", key)
    state = np.zeros(n, dtype=bool)
    pos = int(rng.integers(0, off_range[1] + 1))
    while pos < n:
        on = int(rng.integers(on_range[0], on_range[1] + 1))
        state[pos:pos + on] = True
        pos += on + int(rng.integers(off_range[0], off_range[1] + 1))
    return rated_kw * state, state


def add_appliance(telemetry: Mapping[str, MeterSeries], rated_kw: float = 0.15,
                  seed: int = 0) -> tuple[dict[str, MeterSeries], dict[str, np.ndarray]]:
    """Superimpose a refrigerator cycle on every meter; returns the ground-truth on/off states.

    The appliance draw is added to metered power and to grid supply alike, so
    loss percentages of honest meters stay small.
    """
    out, states = {}, {}
    for m in sorted(telemetry):
        s = telemetry[m].copy()
        power, state = refrigerator_trace(len(s), rated_kw, seed, m)
        ch = s.channels
        ch["power_kw"] = ch["power_kw"] + power
        ch["grid_supply_kw"] = ch["grid_supply_kw"] + power
        ch["reactive_kvar"] = ch["power_kw"] * np.tan(np.arccos(ch["power_factor"]))
        ch["current_a"] = np.hypot(ch["power_kw"], ch["reactive_kvar"]) * 1000.0 / ch["voltage_v"]
        out[m], states[m] = s, state
    return out, states
