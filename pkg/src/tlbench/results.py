"""Result tables: the grid of balanced accuracies all statistics run over.

Rows are keyed by the six experimental factors. Tables round-trip through
CSV with the columns dataset, model, approach, policy, scheme, scenario,
balanced_accuracy_percent (plus provenance and a JSON metadata column).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterator, NamedTuple

FACTORS = ("dataset", "model", "approach", "policy", "scheme", "scenario")


class CellKey(NamedTuple):
    dataset: str
    model: str
    approach: str
    policy: str
    scheme: str
    scenario: str


@dataclass
class ResultRow:
    key: CellKey
    balanced_accuracy: float
    provenance: str = "run"
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0.0 <= self.balanced_accuracy <= 100.0:
            raise ValueError(
                f"balanced accuracy must be a percent in [0, 100], "
                f"got {self.balanced_accuracy} for {self.key}"
            )


class ResultTable:
    """Keyed collection of result rows with unique six-factor keys."""

    def __init__(self, rows: list[ResultRow] | None = None):
        self._rows: dict[CellKey, ResultRow] = {}
        for row in rows or []:
            self.add(row)

    def add(self, row: ResultRow) -> None:
        if row.key in self._rows:
            raise ValueError(f"duplicate result key {row.key}")
        self._rows[row.key] = row

    def upsert(self, row: ResultRow) -> None:
        self._rows[row.key] = row

    def __len__(self) -> int:
        return len(self._rows)

    def __iter__(self) -> Iterator[ResultRow]:
        return iter(self._rows.values())

    def __contains__(self, key: CellKey) -> bool:
        return key in self._rows

    def get(self, key: CellKey) -> ResultRow | None:
        return self._rows.get(key)

    def levels(self, factor: str) -> list[str]:
        """Unique values of a factor, in first-seen order."""
        if factor not in FACTORS:
            raise KeyError(f"unknown factor {factor!r}; expected one of {FACTORS}")
        seen: dict[str, None] = {}
        for key in self._rows:
            seen.setdefault(getattr(key, factor), None)
        return list(seen)

    def select(self, **filters: str | tuple | list) -> "ResultTable":
        """Rows whose factor values match the given filters (scalars or
        collections of allowed values)."""
        for factor in filters:
            if factor not in FACTORS:
                raise KeyError(f"unknown factor {factor!r}; expected one of {FACTORS}")
        allowed = {
            f: (set(v) if isinstance(v, (tuple, list, set)) else {v})
            for f, v in filters.items()
        }
        out = ResultTable()
        for key, row in self._rows.items():
            if all(getattr(key, f) in vals for f, vals in allowed.items()):
                out.add(row)
        return out

    def to_csv(self, dest) -> Path:
        path = Path(dest)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(FACTORS) + ["balanced_accuracy_percent", "provenance", "metadata"])
            for key in sorted(self._rows):
                row = self._rows[key]
                writer.writerow(
                    list(key)
                    + [f"{row.balanced_accuracy:.4f}", row.provenance, json.dumps(row.metadata)]
                )
        return path

    @classmethod
    def from_csv(cls, source) -> "ResultTable":
        table = cls()
        with Path(source).open("r", encoding="utf-8", newline="") as fh:
            for rec in csv.DictReader(fh):
                key = CellKey(*(rec[f] for f in FACTORS))
                meta = json.loads(rec["metadata"]) if rec.get("metadata") else {}
                table.add(
                    ResultRow(
                        key=key,
                        balanced_accuracy=float(rec["balanced_accuracy_percent"]),
                        provenance=rec.get("provenance", "run"),
                        metadata=meta,
                    )
                )
        return table
