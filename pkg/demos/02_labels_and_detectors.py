"""Run the quick pipeline and inspect rule labels and detector scores for one meter."""

#%%
import json
import tempfile
from pathlib import Path

import pandas as pd

from gridguard.pipeline import RunConfig, run_all

CONFIG = Path(__file__).resolve().parent.parent / "configs" / "quick.json"
root = Path(tempfile.mkdtemp()) / "run"
cfg = RunConfig.load(CONFIG)
cfg.output_dir = str(root)
manifest = run_all(cfg)
print([s["stage"] for s in manifest["stages"]])

#%% rule labels with their reason codes
labels = pd.read_csv(root / "labels/labels.csv", keep_default_na=False)
print(labels.label.mean().round(3), "of intervals violate at least one rule")
print(labels[labels.label == 1].reasons.value_counts().head())

#%% detector scores on the test horizon of one meter
scores = pd.read_csv(root / "detectors/scores.csv")
meter = scores.meter_id.iloc[0]
one = scores[scores.meter_id == meter]
print(one.head())
print("ensemble flags:", int(one.ensemble.sum()), "of", len(one))

#%% headline metrics against injected ground truth
doc = json.loads((root / "metrics/metrics.json").read_text())
for name, block in doc["blocks"].items():
    print(f"{name:24s} acc {block['accuracy']:.3f}  f1 {block['f1']:.3f}")
