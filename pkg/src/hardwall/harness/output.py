"""CSV and JSON artifacts for experiment results."""
from __future__ import annotations

import csv
import io
import json
import os
from pathlib import Path

import numpy as np

__all__ = ["format_value", "csv_text", "write_atomic", "write_outputs", "read_summaries"]

SUMMARY_SUFFIX = ".summary.json"


def format_value(v) -> str:
    """Integers as is, floats with 9 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return str(int(v))
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return f"{float(v):.9g}"
    return str(v)


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([format_value(v) for v in r])
    return buf.getvalue()


def write_atomic(path: Path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return [_jsonable(v) for v in x.tolist()]
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (np.floating, float)):
        return float(x)
    return x


def write_outputs(result, config_echo: dict, wall_seconds: float, out_dir) -> dict:
    """Write one CSV per table plus a JSON summary; returns the summary dict."""
    out_dir = Path(out_dir)
    files = []
    for name, (header, rows) in sorted(result.tables.items()):
        path = out_dir / f"{name}.csv"
        write_atomic(path, csv_text(header, rows))
        files.append(str(path))
    summary = {
        "experiment": result.name,
        "config": config_echo,
        "reports": [r.to_dict() for r in result.reports],
        "all_passed": all(r.passed for r in result.reports),
        "certificates": result.certificates,
        "files": files,
        "wall_seconds": wall_seconds,
    }
    summary = _jsonable(summary)
    write_atomic(out_dir / f"{result.name}{SUMMARY_SUFFIX}", json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return summary


def read_summaries(out_dir) -> list:
    return [json.loads(p.read_text()) for p in sorted(Path(out_dir).glob(f"*{SUMMARY_SUFFIX}"))]
