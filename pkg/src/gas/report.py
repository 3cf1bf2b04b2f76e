"""Aggregate evaluation CSVs into a result table (markdown + CSV).

Rows are grouped by (style, variant); each seed's normalized return is the
mean success over that seed's goals scaled to [0, 100], the reported value
is mean +/- population std across seeds, and rows within 95% of the best
return in their style group are marked.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from gas.planner import read_eval_csv


class ReportError(ValueError):
    pass


@dataclass
class ReportEntry:
    style: str
    variant: str
    csv_path: str
    node_count: int | None = None
    retained_frac: float | None = None


@dataclass
class ResultRow:
    style: str
    variant: str
    mean_return: float
    std_return: float
    node_count: int | None
    retained_frac: float | None
    marked: bool = False


REQUIRED_COLUMNS = ("goal_id", "seed", "success_rate", "mean_steps")


def _check_schema(path) -> None:
    with open(path, "r", newline="", encoding="utf-8") as f:
        header = next(csv.reader(f), None)
    if header is None:
        raise ReportError(f"{path}: empty evaluation CSV")
    for col in REQUIRED_COLUMNS:
        if col not in header:
            raise ReportError(f"{path}: missing column {col!r}")


def aggregate(entries: list[ReportEntry]) -> list[ResultRow]:
    if not entries:
        raise ReportError("no report entries")
    rows: list[ResultRow] = []
    for entry in entries:
        _check_schema(entry.csv_path)
        eval_rows = read_eval_csv(entry.csv_path)
        seeds = sorted({r["seed"] for r in eval_rows})
        per_seed = [
            100.0 * float(np.mean([r["success_rate"] for r in eval_rows if r["seed"] == s]))
            for s in seeds
        ]
        rows.append(ResultRow(
            style=entry.style,
            variant=entry.variant,
            mean_return=float(np.mean(per_seed)),
            std_return=float(np.std(per_seed)),  # population std
            node_count=entry.node_count,
            retained_frac=entry.retained_frac,
        ))
    mark_best(rows)
    return rows


def mark_best(rows: list[ResultRow], fraction: float = 0.95) -> None:
    """Mark every row within `fraction` of its style group's best return
    (boundary inclusive)."""
    for style in {r.style for r in rows}:
        group = [r for r in rows if r.style == style]
        best = max(r.mean_return for r in group)
        for r in group:
            r.marked = r.mean_return >= fraction * best


def write_report(rows: list[ResultRow], md_path, csv_path) -> None:
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        w = csv.writer(f)
        w.writerow(["style", "variant", "return_mean", "return_std",
                    "node_count", "retained_frac", "marked"])
        for r in rows:
            w.writerow([
                r.style, r.variant, repr(r.mean_return), repr(r.std_return),
                "" if r.node_count is None else r.node_count,
                "" if r.retained_frac is None else repr(r.retained_frac),
                int(r.marked),
            ])
    with open(md_path, "w", encoding="utf-8") as f:
        f.write("# Evaluation report\n\n")
        f.write("Returns are mean +/- population std of per-seed normalized returns; ")
        f.write("bold rows are within 95% of their group's best.\n\n")
        f.write("| style | variant | return | nodes | retained |\n")
        f.write("|---|---|---|---|---|\n")
        for r in rows:
            val = f"{r.mean_return:.1f} +/- {r.std_return:.1f}"
            if r.marked:
                val = f"**{val}**"
            nodes = "" if r.node_count is None else str(r.node_count)
            retained = "" if r.retained_frac is None else f"{100.0 * r.retained_frac:.1f}%"
            f.write(f"| {r.style} | {r.variant} | {val} | {nodes} | {retained} |\n")
