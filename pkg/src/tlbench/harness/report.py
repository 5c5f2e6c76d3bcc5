"""Report bundle: CSV tables, readable matrices, slopegraph data and the
headline paired statistics."""

from __future__ import annotations

import csv
import json
from pathlib import Path

from .. import metrics
from ..results import ResultTable

__all__ = ["emit_report", "HEADLINE_COMPARISONS"]

# (name, factor, level_a, level_b, holding, restrict)
HEADLINE_COMPARISONS = (
    ("policy_extra_vs_norm", "policy", "norm_aug", "extra_aug",
     ("dataset", "model", "approach"), {}),
    ("approach_ft_vs_l2sp", "approach", "l2sp", "fine_tuning",
     ("dataset", "model", "policy"), {}),
    ("policy_extra_vs_norm_different_bot", "policy", "norm_aug", "extra_aug",
     ("dataset", "model", "approach", "scenario"), {"scenario": ("DBSL", "DBDL")}),
    ("approach_ft_vs_l2sp_different_bot", "approach", "l2sp", "fine_tuning",
     ("dataset", "model", "policy", "scenario"), {"scenario": ("DBSL", "DBDL")}),
)


def _matrix_lines(table: ResultTable) -> list[str]:
    """Readable per-dataset matrix: model rows, strategy/scheme/scenario
    columns, best value per row marked with underscores."""
    lines = []
    col_factors = [
        f for f in ("approach", "policy", "scheme", "scenario") if len(table.levels(f)) > 1
    ]
    if not col_factors:
        col_factors = ["scheme"]
    for dataset in table.levels("dataset"):
        block = table.select(dataset=dataset)
        cols = []
        for row in block:
            col = tuple(getattr(row.key, f) for f in col_factors)
            if col not in cols:
                cols.append(col)
        header = ["model"] + ["/".join(c) for c in cols]
        widths = [max(18, len(h) + 2) for h in header]
        lines.append(f"== {dataset} ==")
        lines.append("".join(h.ljust(w) for h, w in zip(header, widths)))
        for model in block.levels("model"):
            values = {}
            for row in block.select(model=model):
                col = tuple(getattr(row.key, f) for f in col_factors)
                values[col] = row.balanced_accuracy
            if not values:
                continue
            best = max(values.values())
            cells = [model]
            for col in cols:
                if col in values:
                    v = values[col]
                    text = f"_{v:.2f}_" if v == best else f"{v:.2f}"
                else:
                    text = "-"
                cells.append(text)
            lines.append("".join(c.ljust(w) for c, w in zip(cells, widths)))
        lines.append("")
    return lines


def _slopegraph_files(table: ResultTable, out: Path) -> list[Path]:
    written = []
    for name, factor, level_a, level_b, holding, restrict in HEADLINE_COMPARISONS:
        sub = table.select(**restrict) if restrict else table
        try:
            pairs = metrics.build_pairs(sub, factor, level_a, level_b, holding)
        except (ValueError, KeyError):
            continue
        path = out / f"slopegraph_{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(list(holding) + [level_a, level_b])
            for key, a, b in zip(pairs.keys, pairs.a, pairs.b):
                writer.writerow(list(key) + [f"{a:.4f}", f"{b:.4f}"])
        written.append(path)
    return written


def _statistics(table: ResultTable, seed: int) -> dict:
    out = {}
    for name, factor, level_a, level_b, holding, restrict in HEADLINE_COMPARISONS:
        sub = table.select(**restrict) if restrict else table
        try:
            res = metrics.paired_comparison(sub, factor, level_a, level_b, holding, seed=seed)
        except (ValueError, KeyError) as exc:
            out[name] = {"skipped": str(exc)}
            continue
        out[name] = {
            "statistic": res.statistic,
            "p_value": res.p_value,
            "effect_size_d": res.effect_size_d,
            "ci_low": res.ci_low,
            "ci_high": res.ci_high,
            "n_pairs": res.n_pairs,
            "n_resamples": res.n_resamples,
        }
    return out


def _fixture_deltas(table: ResultTable, fixtures: dict, out: Path) -> list[Path]:
    written = []
    for name, fixture in fixtures.items():
        rows = []
        for frow in fixture:
            run_row = table.get(frow.key)
            if run_row is not None:
                rows.append((frow.key, run_row.balanced_accuracy, frow.balanced_accuracy))
        if not rows:
            continue
        path = out / f"delta_vs_{name}.csv"
        with path.open("w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(
                ["dataset", "model", "approach", "policy", "scheme", "scenario",
                 "run", "published", "delta"]
            )
            for key, run_v, fix_v in rows:
                writer.writerow(list(key) + [f"{run_v:.2f}", f"{fix_v:.2f}", f"{run_v - fix_v:+.2f}"])
        written.append(path)
    return written


def emit_report(table: ResultTable, out_dir, fixtures: dict | None = None, seed: int = 0) -> dict:
    """Write the report bundle and return a manifest of produced files."""
    if len(table) == 0:
        raise ValueError("cannot report on an empty result table")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    produced = {"results_csv": str(table.to_csv(out / "results.csv"))}

    matrix_path = out / "matrix.txt"
    matrix_path.write_text("\n".join(_matrix_lines(table)), encoding="utf-8")
    produced["matrix"] = str(matrix_path)

    produced["slopegraphs"] = [str(p) for p in _slopegraph_files(table, out)]

    stats = _statistics(table, seed=seed) if len(table) > 1 else {}
    stats_path = out / "statistics.json"
    stats_path.write_text(json.dumps(stats, indent=2, sort_keys=True), encoding="utf-8")
    produced["statistics"] = str(stats_path)

    if fixtures:
        produced["deltas"] = [str(p) for p in _fixture_deltas(table, fixtures, out)]
    return produced
