"""CSV / JSON report writers shared by the CLI subcommands."""

from __future__ import annotations

import csv
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Sequence

import numpy as np

from .labels import CONTAINER_CLASSES, CONTENT_CLASSES
from .training import EpochRecord, Metrics

MISSING = "-"


def _clean(value: Any) -> Any:
    if isinstance(value, (np.floating, float)):
        value = float(value)
        return None if math.isnan(value) else value
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.ndarray):
        return [_clean(v) for v in value.tolist()]
    if isinstance(value, dict):
        return {k: _clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_clean(v) for v in value]
    return value


def timestamp() -> str:
    return datetime.now(timezone.utc).replace(microsecond=0).isoformat()


def write_json(path: Path, payload: Any) -> Path:
    path.write_text(json.dumps(_clean(payload), indent=2, sort_keys=False) + "\n", encoding="utf-8")
    return path


def _cell(value: Any) -> str:
    value = _clean(value)
    if value is None:
        return MISSING
    if isinstance(value, float):
        return repr(value)
    return str(value)


def write_csv(path: Path, rows: Sequence[dict[str, Any]], columns: Sequence[str] | None = None) -> Path:
    if columns is None:
        columns = list(rows[0]) if rows else []
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(columns)
        for row in rows:
            w.writerow([_cell(row.get(c)) for c in columns])
    return path


def write_table(out_dir: Path, stem: str, rows: Sequence[dict[str, Any]], fmt: str,
                meta: dict[str, Any] | None = None) -> Path:
    """Write ``rows`` as ``stem.csv`` or ``stem.json`` (rows plus ``meta``)."""
    if fmt == "csv":
        columns = list(rows[0]) if rows else []
        if meta:
            rows = [{**row, **meta} for row in rows]
            columns += list(meta)
        return write_csv(out_dir / f"{stem}.csv", rows, columns)
    payload = dict(meta or {})
    payload["rows"] = list(rows)
    return write_json(out_dir / f"{stem}.json", payload)


def summary_row(name: str, metrics: Metrics, joint: bool = True) -> dict[str, Any]:
    """One line in the shape of the results table: model, container, content, joint."""
    return {
        "model": name,
        "container_acc": metrics.container_acc,
        "content_acc": metrics.content_acc,
        "joint_acc": metrics.joint_acc if joint else None,
        "n": metrics.n,
    }


def trace_rows(trace: Sequence[EpochRecord]) -> list[dict[str, Any]]:
    return [vars(rec).copy() for rec in trace]


def write_confusion(out_dir: Path, prefix: str, metrics: Metrics) -> list[Path]:
    """Counts and row-normalized confusion matrices for both heads; rows are true classes."""
    paths = []
    for head, classes, counts in (
        ("container", CONTAINER_CLASSES, metrics.container_confusion),
        ("content", CONTENT_CLASSES, metrics.content_confusion),
    ):
        for kind, matrix in (("counts", counts), ("normalized", Metrics.row_normalize(counts))):
            path = out_dir / f"{prefix}{head}_{kind}.csv"
            with open(path, "w", newline="", encoding="utf-8") as fh:
                w = csv.writer(fh, lineterminator="\n")
                w.writerow(["true\\pred", *classes])
                for name, row in zip(classes, matrix):
                    w.writerow([name, *(_cell(v) for v in row)])
            paths.append(path)
    return paths
