"""Fast, exact CSV writing for wide numeric tables."""

from __future__ import annotations

import csv
from typing import Mapping

import numpy as np
import pandas as pd


def _cells(values) -> list[str]:
    a = np.asarray(values)
    if a.dtype.kind == "f":
        out = list(map(repr, a.tolist()))
        if np.isnan(a).any():
            out = ["" if v == "nan" else v for v in out]
        return out
    if a.dtype.kind in "iub":
        return list(map(str, a.astype(np.int64).tolist()))
    return ["" if v is None else str(v) for v in a.tolist()]


def write_table(path, columns: Mapping[str, object], preamble: str | None = None) -> None:
    """Write equal-length columns as CSV; floats use shortest round-trip repr, NaN is blank."""
    cols = [_cells(v) for v in columns.values()]
    with open(path, "w", encoding="utf-8", newline="") as fh:
        if preamble is not None:
            fh.write(preamble + "\n")
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(list(columns))
        w.writerows(zip(*cols))


def write_frame(df: pd.DataFrame, path, preamble: str | None = None) -> None:
    write_table(path, {c: df[c].to_numpy() for c in df.columns}, preamble)
