"""Static CSV/JSON/SVG reports built from a completed run directory."""

from __future__ import annotations

import json
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np
import pandas as pd

from .errors import IncompleteRun, UsageError
from .features import read_frames

FORMATS = ("csv", "json", "svg")
W, H, PAD = 640, 360, 48


def _fmt(x: float) -> str:
    return f"{x:.2f}"


def _svg(body: list[str], title: str) -> str:
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" '
            f'viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">')
    return "\n".join([
        '<?xml version="1.0" encoding="UTF-8"?>', head,
        f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
        f'<text x="{W / 2}" y="20" text-anchor="middle" font-size="14">{escape(title)}</text>',
        f'<line x1="{PAD}" y1="{H - PAD}" x2="{W - PAD}" y2="{H - PAD}" stroke="black"/>',
        f'<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{H - PAD}" stroke="black"/>',
        *body, "</svg>", ""])


def _scale(v, lo, hi, a, b):
    span = hi - lo if hi > lo else 1.0
    return a + (np.asarray(v, float) - lo) / span * (b - a)


def bar_chart(labels, values, title: str, ymax: float | None = None) -> str:
    values = np.asarray(values, float)
    top = ymax if ymax is not None else max(float(values.max(initial=0.0)), 1e-12)
    n = max(len(values), 1)
    slot = (W - 2 * PAD) / n
    body = []
    for i, (lab, v) in enumerate(zip(labels, values)):
        h = float(_scale(v, 0.0, top, 0, H - 2 * PAD))
        x = PAD + i * slot + slot * 0.15
        body.append(f'<rect x="{_fmt(x)}" y="{_fmt(H - PAD - h)}" width="{_fmt(slot * 0.7)}" '
                    f'height="{_fmt(h)}" fill="steelblue"/>')
        body.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{H - PAD + 14}" text-anchor="middle">'
                    f'{escape(str(lab))}</text>')
        body.append(f'<text x="{_fmt(x + slot * 0.35)}" y="{_fmt(H - PAD - h - 4)}" '
                    f'text-anchor="middle">{v:.3f}</text>')
    return _svg(body, title)


def histogram(values, title: str, bins: int = 30) -> str:
    counts, edges = np.histogram(np.asarray(values, float), bins=bins)
    body = [f'<text x="{PAD}" y="{H - PAD + 14}">{edges[0]:.2f}</text>',
            f'<text x="{W - PAD}" y="{H - PAD + 14}" text-anchor="end">{edges[-1]:.2f}</text>']
    slot = (W - 2 * PAD) / bins
    top = max(int(counts.max(initial=0)), 1)
    for i, c in enumerate(counts):
        h = float(_scale(c, 0, top, 0, H - 2 * PAD))
        body.append(f'<rect x="{_fmt(PAD + i * slot)}" y="{_fmt(H - PAD - h)}" width="{_fmt(slot)}" '
                    f'height="{_fmt(h)}" fill="steelblue" stroke="white"/>')
    return _svg(body, title)


def line_chart(y, title: str, marks=None, step=None) -> str:
    """Polyline of ``y``; ``marks`` (bool) draws red dots; ``step`` draws a second, stepped series."""
    y = np.asarray(y, float)
    x = _scale(np.arange(len(y)), 0, max(len(y) - 1, 1), PAD, W - PAD)
    series = [y] + ([np.asarray(step, float)] if step is not None else [])
    lo = min(float(s.min(initial=0.0)) for s in series)
    hi = max(float(s.max(initial=1.0)) for s in series)
    py = _scale(y, lo, hi, H - PAD, PAD)
    pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, py))
    body = [f'<polyline fill="none" stroke="steelblue" points="{pts}"/>']
    if step is not None:
        sy = _scale(series[1], lo, hi, H - PAD, PAD)
        spts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in zip(x, sy))
        body.append(f'<polyline fill="none" stroke="darkorange" points="{spts}"/>')
    if marks is not None:
        for i in np.flatnonzero(np.asarray(marks, bool)):
            body.append(f'<circle cx="{_fmt(x[i])}" cy="{_fmt(py[i])}" r="2" fill="crimson"/>')
    return _svg(body, title)


# -- run-directory report ---------------------------------------------------

REQUIRED = ("labels/labels.csv", "features/features.csv", "detectors/scores.csv",
            "metrics/metrics.json", "fusion/risk.csv")


def _tables(run_dir: Path, frames=None) -> dict[str, pd.DataFrame]:
    labels = pd.read_csv(run_dir / "labels/labels.csv", dtype={"meter_id": str, "reasons": str},
                         keep_default_na=False)
    n = len(labels)
    n_pos = int(labels["label"].sum())
    dist = pd.DataFrame({"label": [0, 1], "count": [n - n_pos, n_pos],
                         "share": [(n - n_pos) / n if n else 0.0, n_pos / n if n else 0.0]})

    if frames is None:
        frames = read_frames(run_dir / "features/features.csv")
    power = np.concatenate([frames[m]["power_kw"] for m in sorted(frames)])
    counts, edges = np.histogram(power, bins=30)
    hist = pd.DataFrame({"bin_lo": edges[:-1], "bin_hi": edges[1:], "count": counts})

    scores = pd.read_csv(run_dir / "detectors/scores.csv", dtype={"meter_id": str})
    first = sorted(frames)[0]
    sub = scores[scores["meter_id"] == first].sort_values("index")
    ts = pd.DataFrame({"index": sub["index"].to_numpy(),
                       "power_kw": frames[first]["power_kw"][sub["index"].to_numpy()],
                       "ensemble": sub["ensemble"].to_numpy()})

    metrics = json.loads((run_dir / "metrics/metrics.json").read_text(encoding="utf-8"))
    comp = pd.DataFrame([{"Model": r["Model"], "Accuracy": r["Accuracy"], "F1 Score": r["F1 Score"],
                          "ROC-AUC": r["ROC-AUC"]} for r in metrics["table"]])

    risk = pd.read_csv(run_dir / "fusion/risk.csv", dtype={"node": str})
    top = risk.head(10)[["node", "unified_risk", "ts_score_norm", "clf_prob", "graph_prob"]]

    out = {"label_distribution": dist, "consumption_histogram": hist, "anomaly_timeseries": ts,
           "model_comparison": comp, "top_risk": top}
    nilm = run_dir / "nilm/disaggregation.csv"
    if nilm.exists():
        out["nilm_trace"] = pd.read_csv(nilm)
    return out


def _chart(name: str, df: pd.DataFrame) -> str:
    if name == "label_distribution":
        return bar_chart(["normal", "anomalous"], df["share"], "Label distribution", ymax=1.0)
    if name == "consumption_histogram":
        mids = np.repeat((df["bin_lo"] + df["bin_hi"]) / 2, df["count"])
        return histogram(mids, "Consumption histogram (kW)", bins=len(df))
    if name == "anomaly_timeseries":
        return line_chart(df["power_kw"], "Power with ensemble anomaly flags", marks=df["ensemble"] > 0)
    if name == "model_comparison":
        return bar_chart(df["Model"], df["ROC-AUC"].fillna(0.0), "Model comparison (ROC-AUC)", ymax=1.0)
    if name == "top_risk":
        return bar_chart(df["node"], df["unified_risk"], "Top risk nodes", ymax=1.0)
    if name == "nilm_trace":
        return line_chart(df["aggregate"], "NILM appliance state", step=df["appliance_power"])
    raise UsageError(f"no chart for {name}")


def write_report(run_dir, formats=FORMATS, out_dir=None, frames=None) -> list[Path]:
    """Write one file per table and format; returns the written paths in order.

    ``frames`` may pass already loaded feature frames to skip rereading them.
    """
    run_dir = Path(run_dir)
    missing = [p for p in REQUIRED if not (run_dir / p).exists()]
    if missing:
        raise IncompleteRun(f"{run_dir} lacks {missing}")
    bad = [f for f in formats if f not in FORMATS]
    if bad:
        raise UsageError(f"unknown report formats {bad}")
    out = Path(out_dir) if out_dir is not None else run_dir / "report"
    out.mkdir(parents=True, exist_ok=True)
    written = []
    for name, df in _tables(run_dir, frames).items():
        for fmt in formats:
            path = out / f"{name}.{fmt}"
            if fmt == "csv":
                df.to_csv(path, index=False, lineterminator="\n")
            elif fmt == "json":
                path.write_text(json.dumps(df.to_dict(orient="records"), indent=2) + "\n", encoding="utf-8")
            else:
                path.write_text(_chart(name, df), encoding="utf-8")
            written.append(path)
    return written
