"""End-to-end orchestration: one JSON config, nine persisted stages, a manifest.

Stage order: ingest, features, labels, detectors, classifiers, graph, fusion,
metrics, report (plus an optional nilm stage after graph). Each stage reads
only what earlier stages wrote and persists its own outputs under
``<output_dir>/<stage>/``.
"""

from __future__ import annotations

import hashlib
import json
import logging
import platform
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np
import pandas as pd

from . import __version__
from .detectors import DetectorConfig, DetectorSuite, read_scores, scores_to_frame
from .errors import GridGuardError, SingleClass, StageFailure, UsageError
from .features import build_frame, read_frames, write_frames
from .forest import gbm_fit, rf_fit, save_model
from .fusion import DEFAULT_WEIGHTS, drop_component, fuse, risk_report, validate_weights
from .gridgraph import build_graph, gcn_train, majority_labels, rank_nodes, ranking_frame
from .labeler import RuleThresholds, label_arrays, labels_to_frame, read_labels
from .metrics import TABLE_COLUMNS, confusion, evaluate, table_row
from .nilm import ApplianceModel, disaggregate_cyclic, write_result
from .report import write_report
from .synthgrid import (GridTopology, ScenarioConfig, TheftGroundTruth, add_appliance, generate_topology,
                        inject_theft, simulate_telemetry, substream)
from .tables import write_frame
from .telemetry import load_meters, write_csv

logger = logging.getLogger(__name__)

SCHEMA_VERSION = 1
STAGES = ("ingest", "features", "labels", "detectors", "classifiers", "graph", "fusion", "metrics", "report")
CLASSIFIER_FEATURES = (
    "power_kw", "voltage_v", "current_a", "power_factor", "reactive_kvar", "grid_supply_kw",
    "temperature_c", "imbalance_kw", "loss_pct", "roll_mean_1h", "roll_std_1h", "roll_mean_24h",
    "roll_std_24h", "price_weighted_consumption", "apparent_power_kva",
)


# -- configuration ------------------------------------------------------------

def _from_dict(cls, d, where: str):
    d = dict(d or {})
    names = {f.name for f in fields(cls)}
    unknown = sorted(set(d) - names)
    if unknown:
        raise UsageError(f"unknown keys in {where}: {unknown}")
    return cls(**d)


@dataclass
class SynthSettings:
    transformers: int = 20
    meters_per_transformer: int = 25
    days: int = 30
    theft_meter_fraction: float = 0.3
    prevalence: float = 0.188
    appliance: bool = False
    appliance_kw: float = 0.15


@dataclass
class SplitSettings:
    train: float = 0.70
    val: float = 0.15
    test: float = 0.15


@dataclass
class ClassifierSettings:
    features: list = field(default_factory=lambda: list(CLASSIFIER_FEATURES))
    max_train_rows: int = 100_000
    rf_trees: int = 50
    rf_max_depth: int = 12
    rf_min_samples_leaf: int = 5
    gbm_trees: int = 200
    gbm_learning_rate: float = 0.1
    gbm_max_depth: int = 3


@dataclass
class GraphSettings:
    enabled: bool = True
    epochs: int = 300
    hidden: int = 32
    lr: float = 0.01
    holdout: float = 0.3


@dataclass
class FusionSettings:
    weights: list = field(default_factory=lambda: list(DEFAULT_WEIGHTS))
    threshold: float = 0.5
    top_k: int = 10
    normalization: str = "batch"  # or "fixed": bounds from the training horizon


@dataclass
class NilmSettings:
    meter: str | None = None
    tolerance_frac: float = 0.25
    min_on: int = 1
    min_off: int = 1


@dataclass
class RunConfig:
    seed: int = 42
    output_dir: str = "run"
    input_csv: str | None = None
    topology: str | None = None
    truth_csv: str | None = None
    nominal_voltage_v: float = 230.0
    synth: SynthSettings = field(default_factory=SynthSettings)
    thresholds: dict = field(default_factory=lambda: {"imbalance_frac": 0.10, "voltage_band_frac": 0.10,
                                                      "pf_min": 0.85})
    split: SplitSettings = field(default_factory=SplitSettings)
    detectors: dict = field(default_factory=dict)
    classifier: ClassifierSettings = field(default_factory=ClassifierSettings)
    graph: GraphSettings = field(default_factory=GraphSettings)
    fusion: FusionSettings = field(default_factory=FusionSettings)
    nilm: NilmSettings = field(default_factory=NilmSettings)
    schema_version: int = SCHEMA_VERSION

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.schema_version != SCHEMA_VERSION:
            raise UsageError(f"unsupported schema_version {self.schema_version}")
        if not isinstance(self.seed, int) or isinstance(self.seed, bool):
            raise UsageError("seed must be an integer")
        s = self.split
        if min(s.train, s.val, s.test) < 0 or abs(s.train + s.val + s.test - 1.0) > 1e-9 or s.test <= 0:
            raise UsageError(f"split fractions must be nonnegative, sum to 1 and leave a test split: {asdict(s)}")
        validate_weights(self.fusion.weights)
        if self.fusion.normalization not in ("batch", "fixed"):
            raise UsageError("fusion.normalization must be 'batch' or 'fixed'")
        if not 0 < self.graph.holdout < 1:
            raise UsageError("graph.holdout must lie in (0, 1)")
        self.rule_thresholds()
        self.detector_config()

    def rule_thresholds(self) -> RuleThresholds:
        return _from_dict(RuleThresholds, self.thresholds, "thresholds")

    def detector_config(self) -> DetectorConfig:
        d = dict(self.detectors)
        for k in ("forecast_features", "ae_features"):
            if k in d:
                d[k] = tuple(d[k])
        return _from_dict(DetectorConfig, d, "detectors")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def digest(self) -> str:
        # the output location does not affect results, so it is left out of the hash
        doc = {k: v for k, v in self.to_dict().items() if k != "output_dir"}
        return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()

    @classmethod
    def from_dict(cls, d) -> "RunConfig":
        d = dict(d)
        nested = {"synth": SynthSettings, "split": SplitSettings, "classifier": ClassifierSettings,
                  "graph": GraphSettings, "fusion": FusionSettings, "nilm": NilmSettings}
        for key, sub in nested.items():
            if key in d:
                d[key] = _from_dict(sub, d[key], key)
        if "thresholds" in d:
            d["thresholds"] = dict(RunConfig().thresholds, **d["thresholds"])
        return _from_dict(cls, d, "config")

    @classmethod
    def load(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise UsageError(f"{path}: invalid JSON ({exc})") from exc
        return cls.from_dict(doc)


# -- run context ----------------------------------------------------------------

def split_points(n: int, split: SplitSettings) -> tuple[int, int]:
    """``(train_stop, test_start)`` for a chronological split of ``n`` intervals."""
    # the epsilon absorbs float error such as 0.7 * 2880 = 2015.9999999999998
    train_stop = int(split.train * n + 1e-9)
    return train_stop, train_stop + int(split.val * n + 1e-9)


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


class Run:
    """Paths and lazily loaded intermediate data for one output directory."""

    def __init__(self, config: RunConfig, root=None):
        self.config = config
        self.root = Path(root if root is not None else config.output_dir)
        self._cache: dict = {}

    def path(self, stage: str, name: str) -> Path:
        p = self.root / stage / name
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def _get(self, key: str, loader: Callable):
        if key not in self._cache:
            self._cache[key] = loader()
        return self._cache[key]

    def put(self, key: str, value) -> None:
        self._cache[key] = value

    @property
    def telemetry(self):
        return self._get("telemetry", lambda: load_meters(self.root / "ingest/telemetry.csv")[0])

    @property
    def topology(self) -> GridTopology:
        return self._get("topology", lambda: GridTopology.from_dict(
            json.loads((self.root / "ingest/topology.json").read_text(encoding="utf-8"))))

    @property
    def truth(self) -> TheftGroundTruth | None:
        p = self.root / "ingest/ground_truth.csv"
        return self._get("truth", lambda: TheftGroundTruth.read_csv(p) if p.exists() else None)

    @property
    def frames(self):
        return self._get("frames", lambda: read_frames(self.root / "features/features.csv"))

    @property
    def labels(self):
        return self._get("labels", lambda: read_labels(self.root / "labels/labels.csv"))

    @property
    def suite(self) -> DetectorSuite:
        return self._get("suite", lambda: DetectorSuite.load(self.root / "detectors/detectors.json"))

    @property
    def scores(self):
        return self._get("scores", lambda: read_scores(self.root / "detectors/scores.csv", self.suite.thresholds))

    @property
    def probabilities(self) -> pd.DataFrame:
        return self._get("probabilities", lambda: pd.read_csv(
            self.root / "classifiers/probabilities.csv", dtype={"meter_id": str}, float_precision="round_trip"))

    @property
    def node_probs(self) -> pd.DataFrame | None:
        p = self.root / "graph/node_probabilities.csv"
        return self._get("node_probs", lambda: pd.read_csv(p, dtype={"node": str}, float_precision="round_trip")
                         if p.exists() else None)

    def bounds(self, meter: str) -> tuple[int, int, int]:
        n = len(self.frames[meter])
        return (n,) + split_points(n, self.config.split)

    def test_index(self, meter: str) -> np.ndarray:
        n, _, test_start = self.bounds(meter)
        return np.arange(max(test_start, self.config.detector_config().window - 1), n)


# -- stages -----------------------------------------------------------------------

def stage_ingest(run: Run) -> list[Path]:
    cfg = run.config
    out = []
    if cfg.input_csv:
        telemetry, transformer_of = load_meters(cfg.input_csv)
        if cfg.topology:
            topo = GridTopology.from_dict(json.loads(Path(cfg.topology).read_text(encoding="utf-8")))
            telemetry = {m: s for m, s in telemetry.items() if m in set(topo.meters)}
            topo = GridTopology.from_assignment({m: t for m, t in topo.transformer_of().items() if m in telemetry},
                                                topo.nominal_voltage_v)
        else:
            # meters without a transformer_id column share one feeder
            topo = GridTopology.from_assignment({m: transformer_of.get(m, "T_DEFAULT") for m in telemetry},
                                                cfg.nominal_voltage_v)
        truth = TheftGroundTruth.read_csv(cfg.truth_csv) if cfg.truth_csv else None
        appliance = None
    else:
        s = cfg.synth
        topo = generate_topology(s.transformers, s.meters_per_transformer, cfg.seed)
        telemetry = simulate_telemetry(topo, s.days, cfg.seed)
        telemetry, truth = inject_theft(telemetry, ScenarioConfig(
            theft_meter_fraction=s.theft_meter_fraction, target_point_prevalence=s.prevalence, seed=cfg.seed))
        appliance = None
        if s.appliance:
            telemetry, appliance = add_appliance(telemetry, s.appliance_kw, cfg.seed)
    write_csv(telemetry, run.path("ingest", "telemetry.csv"), topo.transformer_of())
    _write_json(run.path("ingest", "topology.json"), topo.to_dict())
    out += [run.path("ingest", "telemetry.csv"), run.path("ingest", "topology.json")]
    if truth is not None:
        truth.write_csv(run.path("ingest", "ground_truth.csv"))
        out.append(run.path("ingest", "ground_truth.csv"))
    if appliance is not None:
        rows = [pd.DataFrame({"meter_id": m, "interval_index": np.arange(len(st)), "state": st.astype(int)})
                for m, st in sorted(appliance.items())]
        pd.concat(rows, ignore_index=True).to_csv(run.path("ingest", "appliance_truth.csv"), index=False,
                                                  lineterminator="\n")
        out.append(run.path("ingest", "appliance_truth.csv"))
    run.put("telemetry", telemetry)
    run.put("topology", topo)
    run.put("truth", truth)
    return out


def stage_features(run: Run) -> list[Path]:
    frames = {m: build_frame(s) for m, s in sorted(run.telemetry.items())}
    path = run.path("features", "features.csv")
    write_frames(frames, path)
    run.put("frames", frames)
    return [path]


def stage_labels(run: Run) -> list[Path]:
    th = run.config.rule_thresholds()
    nominal = run.topology.nominal_voltage_v
    labels = {m: label_arrays(f, nominal, th) for m, f in run.frames.items()}
    path = run.path("labels", "labels.csv")
    write_frame(labels_to_frame(labels), path)
    run.put("labels", labels)
    return [path]


def stage_train_detectors(run: Run) -> list[Path]:
    labels = {m: lab for m, (lab, _) in run.labels.items()}
    stops = {m: run.bounds(m)[1] for m in run.frames}
    suite = DetectorSuite(run.config.detector_config(), run.config.seed).fit(run.frames, labels, stops)
    path = run.path("detectors", "detectors.json")
    suite.save(path)
    run.put("suite", suite)
    return [path]


def stage_score_detectors(run: Run) -> list[Path]:
    scores = run.suite.score(run.frames, {m: run.test_index(m) for m in run.frames})
    path = run.path("detectors", "scores.csv")
    write_frame(scores_to_frame(scores), path)
    run.put("scores", scores)
    return [path]


def stage_detectors(run: Run) -> list[Path]:
    return stage_train_detectors(run) + stage_score_detectors(run)


def _training_rows(run: Run):
    cols = run.config.classifier.features
    X, y = [], []
    for m in sorted(run.frames):
        stop = run.bounds(m)[1]
        X.append(run.frames[m].matrix(cols)[:stop])
        y.append(run.labels[m][0][:stop])
    X, y = np.concatenate(X), np.concatenate(y)
    limit = run.config.classifier.max_train_rows
    if len(X) > limit:
        keep = np.sort(substream(run.config.seed, "classifier", "subsample").choice(len(X), limit, replace=False))
        X, y = X[keep], y[keep]
    return X, y


def stage_classifiers(run: Run) -> list[Path]:
    c = run.config.classifier
    X, y = _training_rows(run)
    logger.info("training classifiers on %d rows x %d features", *X.shape)
    gbm = gbm_fit(X, y, n_trees=c.gbm_trees, learning_rate=c.gbm_learning_rate, max_depth=c.gbm_max_depth,
                  seed=run.config.seed)
    rf = rf_fit(X, y, n_trees=c.rf_trees, seed=run.config.seed, max_depth=c.rf_max_depth,
                min_samples_leaf=c.rf_min_samples_leaf)
    save_model(gbm, run.path("classifiers", "gbm.json"))
    save_model(rf, run.path("classifiers", "rf.json"))
    meters = sorted(run.frames)
    idx = [run.test_index(m) for m in meters]
    Xt = np.concatenate([run.frames[m].matrix(c.features)[i] for m, i in zip(meters, idx)])
    probs = pd.DataFrame({"meter_id": np.repeat(meters, [len(i) for i in idx]),
                          "interval_index": np.concatenate(idx),
                          "gbm_prob": gbm.predict_proba(Xt), "rf_prob": rf.predict_proba(Xt)})
    path = run.path("classifiers", "probabilities.csv")
    write_frame(probs, path)
    run.put("probabilities", probs)
    return [run.path("classifiers", "gbm.json"), run.path("classifiers", "rf.json"), path]


def _graph_inputs(run: Run):
    horizon = {m: run.test_index(m) for m in run.frames}
    flags = {m: s.ensemble for m, s in run.scores.items()}
    probs = {m: g["gbm_prob"].to_numpy() for m, g in run.probabilities.groupby("meter_id", sort=True)}
    frames = {m: _restrict(f, horizon[m]) for m, f in run.frames.items()}
    graph = build_graph(run.topology, frames, flags, probs)
    node_labels = majority_labels({m: run.labels[m][0][horizon[m]] for m in run.frames})
    return graph, node_labels


def _restrict(frame, idx):
    from .features import FeatureFrame
    return FeatureFrame(frame.meter_id, {k: v[idx] for k, v in frame.columns.items()})


def holdout_mask(graph, holdout: float, seed: int) -> np.ndarray:
    """Seeded meter-node split; True marks training meters."""
    meters = [i for i, t in enumerate(graph.node_types) if t == "meter"]
    order = substream(seed, "graph", "holdout").permutation(len(meters))
    n_test = int(round(holdout * len(meters)))
    mask = np.zeros(graph.n_nodes, dtype=bool)
    for j in order[n_test:]:
        mask[meters[j]] = True
    return mask


def stage_graph(run: Run) -> list[Path]:
    g = run.config.graph
    graph, node_labels = _graph_inputs(run)
    graph.edges_frame().to_csv(run.path("graph", "edges.csv"), index=False, lineterminator="\n")
    graph.nodes_frame().to_csv(run.path("graph", "nodes.csv"), index=False, lineterminator="\n")
    out = [run.path("graph", "edges.csv"), run.path("graph", "nodes.csv")]
    if not g.enabled:
        return out
    train = holdout_mask(graph, g.holdout, run.config.seed)
    try:
        model = gcn_train(graph, node_labels, epochs=g.epochs, seed=run.config.seed, hidden=g.hidden, lr=g.lr,
                          train_mask=train)
    except SingleClass as exc:
        logger.warning("graph stage skipped: %s", exc)
        for stale in ("gcn.json", "node_probabilities.csv", "ranking.csv"):
            (run.root / "graph" / stale).unlink(missing_ok=True)
        _write_json(run.path("graph", "skipped.json"), {"reason": str(exc)})
        return out + [run.path("graph", "skipped.json")]
    model.save(run.path("graph", "gcn.json"))
    p = model.forward(graph.normalized_adjacency(), graph.features)
    nodes = pd.DataFrame({"node": graph.node_ids, "type": graph.node_types, "probability": p,
                          "train": train.astype(int)})
    nodes.to_csv(run.path("graph", "node_probabilities.csv"), index=False, lineterminator="\n")
    ranking_frame(rank_nodes(model, graph, run.config.fusion.top_k, probs=p)).to_csv(
        run.path("graph", "ranking.csv"), index=False, lineterminator="\n")
    run.put("node_probs", nodes)
    return out + [run.path("graph", p_) for p_ in ("gcn.json", "node_probabilities.csv", "ranking.csv")]


def stage_nilm(run: Run) -> list[Path]:
    c = run.config.nilm
    meter = c.meter or sorted(run.frames)[0]
    model = ApplianceModel(run.config.synth.appliance_kw, c.tolerance_frac, c.min_on, c.min_off)
    result = disaggregate_cyclic(run.frames[meter]["power_kw"], model)
    path = run.path("nilm", "disaggregation.csv")
    write_result(result, path)
    return [path]


def _node_components(run: Run):
    """Per-node mean detector relative score and mean GBM probability over the test horizon."""
    ts = {m: float(np.mean(s.relative_score())) if len(s.index) else 0.0 for m, s in run.scores.items()}
    clf = {m: float(g["gbm_prob"].mean()) for m, g in run.probabilities.groupby("meter_id", sort=True)}
    topo = run.topology
    for t in topo.transformers:
        kids = topo.meters_of(t)
        ts[t] = float(np.mean([ts[m] for m in kids])) if kids else 0.0
        clf[t] = float(np.mean([clf[m] for m in kids])) if kids else 0.0
    return ts, clf


def _fixed_ts_range(run: Run) -> tuple[float, float]:
    """Bounds of per-meter mean relative scores over the training horizon."""
    suite = run.suite
    vals = []
    L = suite.config.window
    for m, f in sorted(run.frames.items()):
        stop = run.bounds(m)[1]
        idx = np.arange(L - 1, stop)
        if len(idx):
            vals.append(float(np.mean(suite.score_meter(f, idx).relative_score())))
    return (min(vals), max(vals)) if vals else (0.0, 1.0)


def stage_fusion(run: Run) -> list[Path]:
    f = run.config.fusion
    ts, clf = _node_components(run)
    nodes = sorted(run.topology.transformers) + sorted(run.topology.meters)
    weights = tuple(f.weights)
    probs = run.node_probs
    if probs is None:
        weights = drop_component(weights, 2)
        graph = np.zeros(len(nodes))
    else:
        by_node = dict(zip(probs["node"], probs["probability"]))
        graph = np.array([by_node[n] for n in nodes])
    value_range = _fixed_ts_range(run) if f.normalization == "fixed" else None
    records = fuse(nodes, [ts[n] for n in nodes], [clf[n] for n in nodes], graph, weights, "test", value_range)
    report = risk_report(records, f.threshold, f.top_k)
    report.to_frame().to_csv(run.path("fusion", "risk.csv"), index=False, lineterminator="\n")
    run.path("fusion", "risk.json").write_text(report.to_json() + "\n", encoding="utf-8")
    run.put("risk", report)
    return [run.path("fusion", "risk.csv"), run.path("fusion", "risk.json")]


def _truth_for(run: Run, meter: str, idx: np.ndarray) -> np.ndarray:
    if run.truth is not None and meter in run.truth.flags:
        return run.truth.flags[meter][idx].astype(np.int8)
    return run.labels[meter][0][idx]


def compute_metrics(run: Run) -> dict:
    meters = sorted(run.frames)
    truth_name = "ground_truth" if run.truth is not None else "rule_labels"
    idx = {m: run.test_index(m) for m in meters}
    y = np.concatenate([_truth_for(run, m, idx[m]) for m in meters])
    blocks = {}
    probs = run.probabilities.sort_values(["meter_id", "interval_index"], kind="stable")
    for name, col in (("Gradient Boosting", "gbm_prob"), ("Random Forest", "rf_prob")):
        p = probs[col].to_numpy()
        blocks[name] = evaluate(y, (p > 0.5).astype(int), p)
    ens = np.concatenate([run.scores[m].ensemble for m in meters])
    rel = np.concatenate([run.scores[m].relative_score() for m in meters])
    blocks["Detector Ensemble"] = evaluate(y, ens, rel)
    rule = np.concatenate([run.labels[m][0][idx[m]] for m in meters])
    blocks["Rule Labels"] = evaluate(y, rule)
    cm = confusion(y, ens)
    summary = {"truth": truth_name, "n_test_intervals": int(len(y)), "test_prevalence": float(y.mean()),
               "detector_recall": cm.recall, "detector_fpr": cm.false_positive_rate}
    nodes = run.node_probs
    if nodes is not None:
        node_truth = majority_labels({m: _truth_for(run, m, idx[m]) for m in meters})
        held = nodes[(nodes["type"] == "meter") & (nodes["train"] == 0)]
        yt = np.array([node_truth[n] for n in held["node"]])
        pt = held["probability"].to_numpy()
        blocks["GCN (held-out meters)"] = evaluate(yt, (pt > 0.5).astype(int), pt)
        summary["gcn_holdout_accuracy"] = blocks["GCN (held-out meters)"]["accuracy"]
    nilm_truth = run.root / "ingest/appliance_truth.csv"
    nilm_out = run.root / "nilm/disaggregation.csv"
    if nilm_truth.exists() and nilm_out.exists():
        meter = run.config.nilm.meter or meters[0]
        t = pd.read_csv(nilm_truth, dtype={"meter_id": str})
        st = t[t["meter_id"] == meter].sort_values("interval_index")["state"].to_numpy()
        est = pd.read_csv(nilm_out)["state"].to_numpy()
        summary["nilm_state_f1"] = confusion(st, est).f1
    return {"summary": summary, "blocks": blocks,
            "table": [table_row(name, blocks[name]) for name in blocks]}


def stage_metrics(run: Run) -> list[Path]:
    doc = compute_metrics(run)
    _write_json(run.path("metrics", "metrics.json"), doc)
    pd.DataFrame(doc["table"], columns=list(TABLE_COLUMNS)).to_csv(
        run.path("metrics", "metrics.csv"), index=False, lineterminator="\n")
    run.put("metrics", doc)
    return [run.path("metrics", "metrics.json"), run.path("metrics", "metrics.csv")]


def stage_report(run: Run) -> list[Path]:
    return write_report(run.root, frames=run.frames)


STAGE_FUNCS: dict[str, Callable[[Run], list[Path]]] = {
    "ingest": stage_ingest,
    "features": stage_features,
    "labels": stage_labels,
    "detectors": stage_detectors,
    "classifiers": stage_classifiers,
    "graph": stage_graph,
    "nilm": stage_nilm,
    "fusion": stage_fusion,
    "metrics": stage_metrics,
    "report": stage_report,
}


def stage_plan(config: RunConfig) -> list[str]:
    plan = list(STAGES)
    if not config.input_csv and config.synth.appliance:
        plan.insert(plan.index("fusion"), "nilm")
    return plan


def run_stage(run: Run, name: str) -> list[Path]:
    try:
        return STAGE_FUNCS[name](run)
    except (GridGuardError, ValueError, KeyError, OSError) as exc:
        raise StageFailure(name, exc) from exc


def run_all(config: RunConfig, root=None) -> dict:
    """Execute every stage in order and write ``manifest.json``; returns the manifest."""
    run = Run(config, root)
    run.root.mkdir(parents=True, exist_ok=True)
    (run.root / "config.json").write_text(config.to_json() + "\n", encoding="utf-8")
    stages = []
    for name in stage_plan(config):
        logger.info("stage %s", name)
        t0 = time.perf_counter()
        files = run_stage(run, name)
        stages.append({"stage": name, "files": sorted(str(p.relative_to(run.root)) for p in files),
                       "wall_seconds": round(time.perf_counter() - t0, 3)})
    manifest = {
        "config_hash": config.digest(),
        "versions": {"gridguard": __version__, "numpy": np.__version__, "pandas": pd.__version__,
                     "python": platform.python_version()},
        "stages": stages,
        "metrics": run._cache["metrics"]["summary"],
    }
    _write_json(run.root / "manifest.json", manifest)
    return manifest
