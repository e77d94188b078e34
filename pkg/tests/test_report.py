import json
import shutil
import xml.etree.ElementTree as ET

import pandas as pd
import pytest

from gridguard.errors import IncompleteRun, UsageError
from gridguard.report import bar_chart, histogram, line_chart, write_report


def test_charts_are_well_formed_xml():
    for svg in (bar_chart(["a", "b<&>"], [0.2, 0.9], "Bars & more"),
                histogram([1.0, 2.0, 2.5, 9.0], "Hist"),
                histogram([3.0, 3.0], "Constant"),
                line_chart([1.0, 3.0, 2.0], "Line", marks=[False, True, False], step=[0.0, 1.0, 0.0]),
                line_chart([], "Empty")):
        root = ET.fromstring(svg)
        assert root.tag.endswith("svg")


def test_report_files_are_consistent(small_run, tmp_path):
    root, _ = small_run
    written = write_report(root, out_dir=tmp_path / "rep")
    names = {p.stem for p in written}
    assert names == {"label_distribution", "consumption_histogram", "anomaly_timeseries", "model_comparison",
                     "top_risk", "nilm_trace"}
    for name in names:
        csv = pd.read_csv(tmp_path / "rep" / f"{name}.csv")
        doc = json.loads((tmp_path / "rep" / f"{name}.json").read_text())
        assert len(doc) == len(csv)
        assert list(doc[0]) == list(csv.columns)
        ET.parse(tmp_path / "rep" / f"{name}.svg")
    dist = pd.read_csv(tmp_path / "rep/label_distribution.csv")
    assert dist["share"].sum() == pytest.approx(1.0)
    labels = pd.read_csv(root / "labels/labels.csv")
    assert dist["count"].tolist() == [int((labels["label"] == 0).sum()), int(labels["label"].sum())]


def test_zero_anomaly_distribution(small_run, tmp_path):
    root, _ = small_run
    copy = tmp_path / "run"
    for sub in ("labels", "features", "detectors", "metrics", "fusion"):
        shutil.copytree(root / sub, copy / sub)
    labels = pd.read_csv(copy / "labels/labels.csv", keep_default_na=False)
    labels["label"] = 0
    labels["reasons"] = ""
    labels.to_csv(copy / "labels/labels.csv", index=False)
    write_report(copy, formats=["csv"])
    dist = pd.read_csv(copy / "report/label_distribution.csv")
    assert dist["share"].tolist() == [1.0, 0.0]


def test_report_errors(small_run, tmp_path):
    with pytest.raises(IncompleteRun):
        write_report(tmp_path)
    with pytest.raises(UsageError):
        write_report(small_run[0], formats=["pdf"], out_dir=tmp_path)
