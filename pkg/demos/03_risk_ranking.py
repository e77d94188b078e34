"""Fuse detector, classifier and graph evidence into one ranked risk list."""

#%%
import sys
from pathlib import Path

import pandas as pd

from gridguard.fusion import fuse, risk_report

nodes = ["M01", "M02", "M03", "M04"]
ts_raw = [0.2, 3.5, 1.1, 0.4]      # raw detector scores, normalized within the batch
clf_prob = [0.05, 0.90, 0.60, 0.10]
graph_prob = [0.10, 0.80, 0.70, 0.20]
report = risk_report(fuse(nodes, ts_raw, clf_prob, graph_prob), threshold=0.5, k=3)
print(report.to_frame()[["node", "ts_score_norm", "clf_prob", "graph_prob", "unified_risk"]])
print("flagged:", [r.node for r in report.flagged])

#%% the same nodes scored with the graph component switched off
no_graph = risk_report(fuse(nodes, ts_raw, clf_prob, graph_prob, weights=(0.5, 0.5, 0.0)))
print(no_graph.to_frame()[["node", "unified_risk", "w_ts", "w_clf", "w_graph"]])

#%% ranking from a full run: pass any run directory as the first argument
if len(sys.argv) > 1:
    risk = pd.read_csv(Path(sys.argv[1]) / "fusion/risk.csv")
    print(risk.head(10))
