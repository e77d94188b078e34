"""``gridguard`` command line.

Exit codes: 0 success, 1 usage error, 2 data error, 3 internal error.
Diagnostics go to stderr; data goes to files or stdout.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .errors import DataError, GridGuardError, StageFailure, UsageError
from .metrics import evaluate
from .nilm import ApplianceModel, disaggregate_cyclic, write_result
from .pipeline import (Run, RunConfig, run_all, run_stage, stage_score_detectors,
                       stage_train_detectors)
from .report import FORMATS, write_report
from .synthgrid import ScenarioConfig, add_appliance, generate_topology, inject_theft, simulate_telemetry
from .telemetry import read_frame, write_csv

logger = logging.getLogger("gridguard")

LOG_LEVELS = {"error": logging.ERROR, "warn": logging.WARNING, "info": logging.INFO, "debug": logging.DEBUG}
INDEX_COLUMNS = ("interval_index", "index")
PRED_COLUMNS = ("prediction", "pred", "label", "flag", "ensemble")
SCORE_COLUMNS = ("score", "probability", "prob", "gbm_prob")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _common() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=None, help="master seed (overrides the config)")
    p.add_argument("--config", type=Path, default=None, help="JSON run configuration")
    return p


def build_parser() -> argparse.ArgumentParser:
    common = _common()
    parser = _Parser(prog="gridguard", description="Electricity-theft detection on smart-meter telemetry.")
    parser.add_argument("--version", action="version", version=f"gridguard {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("synth", parents=[common], help="generate a synthetic grid with injected theft")
    p.add_argument("--transformers", type=int, default=None)
    p.add_argument("--meters", type=int, default=None, help="meters per transformer")
    p.add_argument("--days", type=int, default=None)
    p.add_argument("--prevalence", type=float, default=None)
    p.add_argument("--appliance", action="store_true", help="add a cyclic refrigerator with ground truth")
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("ingest", parents=[common], help="parse, resample and impute a telemetry CSV")
    p.add_argument("--input", type=Path, required=True)
    p.add_argument("--topology", type=Path, default=None)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--run", type=Path, required=True)

    for name, text in (("featurize", "compute feature frames"), ("label", "apply the rule labeler"),
                       ("train-detectors", "train the anomaly detectors"),
                       ("score", "score the test horizon with the detectors"),
                       ("train-clf", "train random forest and gradient boosting"),
                       ("train-gnn", "build the grid graph and train the GCN"),
                       ("fuse", "fuse evidence into the risk report")):
        p = sub.add_parser(name, parents=[common], help=text)
        p.add_argument("--run", type=Path, required=True)

    p = sub.add_parser("nilm", parents=[common], help="disaggregate a cyclic appliance from one meter")
    p.add_argument("--input", type=Path, required=True, help="telemetry CSV")
    p.add_argument("--meter", required=True)
    p.add_argument("--rated-kw", type=float, default=0.15)
    p.add_argument("--tolerance", type=float, default=0.25)
    p.add_argument("--min-on", type=int, default=1)
    p.add_argument("--min-off", type=int, default=1)
    p.add_argument("--out", type=Path, required=True)

    p = sub.add_parser("eval", parents=[common], help="print metrics as JSON")
    p.add_argument("--pred", type=Path, default=None)
    p.add_argument("--truth", type=Path, default=None)
    p.add_argument("--run", type=Path, default=None)

    p = sub.add_parser("run-all", parents=[common], help="run every stage end to end")
    p.add_argument("--out", type=Path, default=None)

    p = sub.add_parser("report", parents=[common], help="write CSV/JSON/SVG reports for a run")
    p.add_argument("--run", type=Path, required=True)
    p.add_argument("--format", action="append", default=None, choices=FORMATS)
    p.add_argument("--out", type=Path, default=None)
    return parser


def _config(args, run_dir: Path | None = None) -> RunConfig:
    if args.config is not None:
        cfg = RunConfig.load(args.config)
    elif run_dir is not None and (run_dir / "config.json").exists():
        cfg = RunConfig.load(run_dir / "config.json")
    else:
        cfg = RunConfig()
    if args.seed is not None:
        cfg.seed = args.seed
    if run_dir is not None:
        cfg.output_dir = str(run_dir)
    cfg.validate()
    return cfg


def _save_config(cfg: RunConfig) -> None:
    root = Path(cfg.output_dir)
    root.mkdir(parents=True, exist_ok=True)
    (root / "config.json").write_text(cfg.to_json() + "\n", encoding="utf-8")


def cmd_synth(args) -> int:
    cfg = _config(args)
    s = cfg.synth
    n_t = args.transformers if args.transformers is not None else s.transformers
    n_m = args.meters if args.meters is not None else s.meters_per_transformer
    days = args.days if args.days is not None else s.days
    prevalence = args.prevalence if args.prevalence is not None else s.prevalence
    topo = generate_topology(n_t, n_m, cfg.seed)
    tel = simulate_telemetry(topo, days, cfg.seed)
    tel, truth = inject_theft(tel, ScenarioConfig(s.theft_meter_fraction, prevalence, seed=cfg.seed))
    args.out.mkdir(parents=True, exist_ok=True)
    if args.appliance or s.appliance:
        tel, states = add_appliance(tel, s.appliance_kw, cfg.seed)
        rows = [pd.DataFrame({"meter_id": m, "interval_index": np.arange(len(v)), "state": v.astype(int)})
                for m, v in sorted(states.items())]
        pd.concat(rows, ignore_index=True).to_csv(args.out / "appliance_truth.csv", index=False,
                                                  lineterminator="\n")
    write_csv(tel, args.out / "telemetry.csv", topo.transformer_of())
    truth.write_csv(args.out / "ground_truth.csv")
    (args.out / "topology.json").write_text(json.dumps(topo.to_dict(), indent=2, sort_keys=True) + "\n",
                                            encoding="utf-8")
    logger.info("wrote %d meters, prevalence %.4f, to %s", len(tel), truth.prevalence(), args.out)
    return 0


def cmd_ingest(args) -> int:
    cfg = _config(args, args.run)
    cfg.input_csv = str(args.input)
    cfg.topology = str(args.topology) if args.topology else None
    cfg.truth_csv = str(args.truth) if args.truth else None
    _save_config(cfg)
    run_stage(Run(cfg), "ingest")
    return 0


_STAGE_OF = {"featurize": "features", "label": "labels", "train-clf": "classifiers", "train-gnn": "graph",
             "fuse": "fusion"}


def cmd_stage(args) -> int:
    cfg = _config(args, args.run)
    run = Run(cfg)
    if args.command == "train-detectors":
        stage_train_detectors(run)
    elif args.command == "score":
        stage_score_detectors(run)
    else:
        run_stage(run, _STAGE_OF[args.command])
    return 0


def cmd_nilm(args) -> int:
    frame = read_frame(args.input)
    rows = frame[frame["meter_id"] == args.meter].sort_values("timestamp", kind="stable")
    if rows.empty:
        raise DataError(f"meter {args.meter!r} not found in {args.input}")
    power = rows["power_kw"].to_numpy(dtype=float)
    if np.isnan(power).any():
        raise DataError(f"meter {args.meter!r} has missing power readings; ingest the file first")
    model = ApplianceModel(args.rated_kw, args.tolerance, args.min_on, args.min_off)
    result = disaggregate_cyclic(power, model)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    write_result(result, args.out)
    return 0


def _pick(df: pd.DataFrame, options, what: str, required: bool = True):
    for c in options:
        if c in df.columns:
            return c
    if required:
        raise DataError(f"no {what} column; expected one of {list(options)}")
    return None


def eval_files(pred_path, truth_path) -> dict:
    pred = pd.read_csv(pred_path, dtype={"meter_id": str})
    truth = pd.read_csv(truth_path, dtype={"meter_id": str})
    pi, ti = _pick(pred, INDEX_COLUMNS, "index"), _pick(truth, INDEX_COLUMNS, "index")
    pc = _pick(pred, PRED_COLUMNS, "prediction")
    tc = _pick(truth, ("flag", "label", "truth"), "truth")
    sc = _pick(pred, SCORE_COLUMNS, "score", required=False)
    left = pred.rename(columns={pi: "_i"})
    right = truth.rename(columns={ti: "_i", tc: "_truth"})[["meter_id", "_i", "_truth"]]
    merged = left.merge(right, on=["meter_id", "_i"], how="inner", validate="one_to_one")
    if merged.empty:
        raise DataError("predictions and truth share no (meter_id, index) rows")
    scores = merged[sc].to_numpy(float) if sc else None
    return evaluate(merged["_truth"].to_numpy(int), merged[pc].to_numpy(int), scores)


def cmd_eval(args) -> int:
    if args.run is not None:
        run = Run(_config(args, args.run))
        run_stage(run, "metrics")
        doc = run._cache["metrics"]
    elif args.pred is not None and args.truth is not None:
        doc = eval_files(args.pred, args.truth)
    else:
        raise UsageError("eval needs --pred and --truth, or --run")
    print(json.dumps(doc, indent=2, sort_keys=True))
    return 0


def cmd_run_all(args) -> int:
    cfg = _config(args)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    manifest = run_all(cfg)
    logger.info("run complete: %s", json.dumps(manifest["metrics"], sort_keys=True))
    return 0


def cmd_report(args) -> int:
    formats = tuple(dict.fromkeys(args.format)) if args.format else FORMATS
    for p in write_report(args.run, formats, args.out):
        logger.debug("wrote %s", p)
    return 0


COMMANDS = {"synth": cmd_synth, "ingest": cmd_ingest, "nilm": cmd_nilm, "eval": cmd_eval,
            "run-all": cmd_run_all, "report": cmd_report}


def _exit_code(exc: BaseException) -> int:
    if isinstance(exc, StageFailure):
        return _exit_code(exc.cause)
    if isinstance(exc, UsageError):
        return 1
    if isinstance(exc, (DataError, FileNotFoundError)):
        return 2
    return 3


def _setup_logging() -> None:
    level = LOG_LEVELS.get(os.environ.get("GRIDGUARD_LOG", "warn").lower(), logging.WARNING)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root = logging.getLogger("gridguard")
    root.handlers[:] = [handler]
    root.setLevel(level)
    root.propagate = False


def main(argv=None) -> int:
    _setup_logging()
    try:
        args = build_parser().parse_args(argv)
        return COMMANDS.get(args.command, cmd_stage)(args)
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    except (GridGuardError, FileNotFoundError) as exc:
        print(f"gridguard: error: {exc}", file=sys.stderr)
        return _exit_code(exc)
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        print(f"gridguard: internal error: {exc!r}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
