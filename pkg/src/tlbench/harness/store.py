"""Append-only result store: one JSON record per line, keyed by the six
experimental factors. Appends take an exclusive file lock; a rebuild pass
derives table views (last write wins per key)."""

from __future__ import annotations

import fcntl
import json
from pathlib import Path

from ..results import FACTORS, CellKey, ResultRow, ResultTable

__all__ = ["append_rows", "read_table", "existing_keys"]


def append_rows(store_path, rows) -> None:
    path = Path(store_path)
    path.parent.mkdir(parents=True, exist_ok=True)
    lines = []
    for row in rows:
        obj = {f: getattr(row.key, f) for f in FACTORS}
        obj["balanced_accuracy_percent"] = row.balanced_accuracy
        obj["provenance"] = row.provenance
        obj["metadata"] = row.metadata
        lines.append(json.dumps(obj, sort_keys=True))
    with path.open("a", encoding="utf-8") as fh:
        fcntl.flock(fh, fcntl.LOCK_EX)
        try:
            for line in lines:
                fh.write(line + "\n")
            fh.flush()
        finally:
            fcntl.flock(fh, fcntl.LOCK_UN)


def _iter_records(store_path):
    path = Path(store_path)
    if not path.exists():
        return
    with path.open("r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)


def read_table(store_path) -> ResultTable:
    table = ResultTable()
    for obj in _iter_records(store_path):
        key = CellKey(*(obj[f] for f in FACTORS))
        table.upsert(
            ResultRow(
                key=key,
                balanced_accuracy=float(obj["balanced_accuracy_percent"]),
                provenance=obj.get("provenance", "run"),
                metadata=obj.get("metadata", {}),
            )
        )
    return table


def existing_keys(store_path) -> set:
    return {CellKey(*(obj[f] for f in FACTORS)) for obj in _iter_records(store_path)}
