"""Normalized per-state distribution figures from experiment runs tables.

Input is the engine's ``runs.csv`` contract: header
``state,method,run,PD,PPS_avg,PPS_min,Bias,Unfairness``. One panel is drawn
per state with an area-normalized histogram per method; rows whose method is
``enacted`` are drawn as vertical reference lines instead. Input files are
never modified, and output is deterministic for fixed inputs.
"""

from __future__ import annotations

import csv
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("Agg")

import matplotlib.pyplot as plt
import numpy as np

EXPECTED_HEADER = ["state", "method", "run", "PD", "PPS_avg", "PPS_min", "Bias", "Unfairness"]
METRIC_COLUMNS = EXPECTED_HEADER[3:]
ENACTED = "enacted"


class RunsTableError(ValueError):
    """The runs CSV does not match the expected schema."""


def load_runs(path: str | Path) -> list[dict]:
    """Parse and validate a runs.csv file into row dicts with float metrics."""
    path = Path(path)
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise RunsTableError(f"{path}: empty file") from None
        if header != EXPECTED_HEADER:
            raise RunsTableError(
                f"{path}: header {header!r} does not match {EXPECTED_HEADER!r}"
            )
        rows = []
        for i, raw in enumerate(reader):
            if len(raw) != len(header):
                raise RunsTableError(f"{path}: row {i + 2} has {len(raw)} fields")
            row = {"state": raw[0], "method": raw[1], "run": raw[2]}
            for name, value in zip(METRIC_COLUMNS, raw[3:]):
                try:
                    row[name] = float(value)
                except ValueError as exc:
                    raise RunsTableError(f"{path}: row {i + 2}: bad {name}: {value!r}") from exc
            rows.append(row)
    if not rows:
        raise RunsTableError(f"{path}: table has a header but no rows")
    return rows


def normalized_histogram(values, bins: int):
    """Density histogram whose bar areas integrate to 1."""
    values = np.asarray(list(values), dtype=float)
    if values.size == 0:
        raise ValueError("no values to histogram")
    heights, edges = np.histogram(values, bins=bins, density=True)
    return heights, edges


def plot_distributions(runs_csv: str | Path, metric: str, out: str | Path,
                       bins: int = 40, force: bool = False) -> Path:
    """Write one figure: a panel per state, a normalized histogram per method.

    Raises if ``metric`` is not a metric column, if the table is empty, or if
    ``out`` already exists and ``force`` is not set.
    """
    out = Path(out)
    if out.exists() and not force:
        raise FileExistsError(f"{out} exists; pass force=True (or --force) to overwrite")
    if metric not in METRIC_COLUMNS:
        raise ValueError(f"unknown metric {metric!r}; available: {', '.join(METRIC_COLUMNS)}")
    rows = load_runs(runs_csv)

    by_state: dict[str, dict[str, list[float]]] = defaultdict(lambda: defaultdict(list))
    for row in rows:
        by_state[row["state"]][row["method"]].append(row[metric])
    states = sorted(by_state)

    fig, axes = plt.subplots(1, len(states), figsize=(4.2 * len(states), 3.4),
                             squeeze=False, sharey=False)
    for ax, state in zip(axes[0], states):
        methods = by_state[state]
        for method in sorted(m for m in methods if m != ENACTED):
            heights, edges = normalized_histogram(methods[method], bins)
            ax.stairs(heights, edges, fill=True, alpha=0.45, label=method)
        if ENACTED in methods:
            for value in methods[ENACTED]:
                ax.axvline(value, color="black", linestyle="--", linewidth=1.2,
                           label=ENACTED)
        ax.set_title(state)
        ax.set_xlabel(metric)
        ax.set_ylabel("density")
        # collapse duplicate labels (several enacted lines)
        handles, labels = ax.get_legend_handles_labels()
        seen: dict[str, object] = {}
        for h, l in zip(handles, labels):
            seen.setdefault(l, h)
        ax.legend(seen.values(), seen.keys(), fontsize=8)
    fig.tight_layout()
    fig.savefig(out, dpi=150, metadata={"Software": "districtfig"})
    plt.close(fig)
    return out
