# src/exporters.py
from __future__ import annotations

import json
from io import StringIO
from pathlib import Path
from typing import Any, Iterable

import numpy as np
import pandas as pd

CSV_COLUMNS = (
    "x", "unit", "rate_v1_bps", "rate_v2_bps", "qber", "n0_low", "n1_low", "n1_up",
    "eph_up", "lambda_ec", "secure_len_v1", "secure_len_v2",
)


def sweep_frame(points: Iterable) -> pd.DataFrame:
    """One row per SweepPoint; bound columns describe the v2 estimate, NaN where it failed."""
    rows = []
    for p in points:
        r = p.report
        b = r.bounds_v2 if r is not None and r.estimated("v2") else None
        rows.append({
            "x": p.x,
            "unit": p.unit,
            "rate_v1_bps": p.rate_v1_bps,
            "rate_v2_bps": p.rate_v2_bps,
            "qber": p.qber,
            "n0_low": b.n0_low if b else np.nan,
            "n1_low": b.n1_low if b else np.nan,
            "n1_up": b.n1_up if b else np.nan,
            "eph_up": b.eph_up if b else np.nan,
            "lambda_ec": r.lambda_ec_v2 if r else np.nan,
            "secure_len_v1": r.secure_length_v1 if r else pd.NA,
            "secure_len_v2": r.secure_length_v2 if r else pd.NA,
        })
    return pd.DataFrame(rows, columns=list(CSV_COLUMNS))


def export_dataframe_csv(df: pd.DataFrame) -> bytes:
    buf = StringIO()
    df.to_csv(buf, index=False, lineterminator="\n")
    return buf.getvalue().encode()


def write_csv(df: pd.DataFrame, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_bytes(export_dataframe_csv(df))
    return path


def _default(obj: Any) -> Any:
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"{type(obj).__name__} is not JSON serialisable")


def to_json(obj: Any) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, default=_default) + "\n"


def write_json(obj: Any, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_json(obj), encoding="utf-8")
    return path
