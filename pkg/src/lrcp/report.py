"""Report generation: aggregation tables (text + CSV) and figures.

Reads result records, groups them by experiment, writes one stable-schema CSV
plus rendered PNG figures (sweep curves with confidence bands, extinction-tail
fits, and a summary chart of scalar estimates) into the output directory.
"""

from __future__ import annotations

import csv
import os
from collections import defaultdict

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .records import read_records

__all__ = ["generate_report", "CSV_COLUMNS"]

CSV_COLUMNS = [
    "experiment",
    "operation",
    "grid_parameter",
    "grid_value",
    "value",
    "ci_low",
    "ci_high",
    "n_samples",
    "n_escaped",
    "flags",
    "bracket_lo",
    "bracket_hi",
    "slope",
    "r_squared",
    "events_used",
    "version",
]


def _row(rec: dict) -> dict:
    extra = rec.get("extra", {})
    return {
        "experiment": rec.get("experiment", ""),
        "operation": rec.get("operation", ""),
        "grid_parameter": extra.get("grid_parameter", ""),
        "grid_value": extra.get("grid_value", ""),
        "value": rec.get("value", ""),
        "ci_low": rec.get("ci_low", ""),
        "ci_high": rec.get("ci_high", ""),
        "n_samples": rec.get("n_samples", ""),
        "n_escaped": rec.get("n_escaped", 0),
        "flags": ";".join(rec.get("flags", [])),
        "bracket_lo": extra.get("bracket_lo", ""),
        "bracket_hi": extra.get("bracket_hi", ""),
        "slope": extra.get("slope", ""),
        "r_squared": extra.get("r_squared", ""),
        "events_used": extra.get("events_used", ""),
        "version": rec.get("version", ""),
    }


def _text_table(rows: list) -> str:
    headers = ["experiment", "operation", "grid_value", "value",
               "ci_low", "ci_high", "n_samples", "flags"]
    table = [headers] + [
        [f"{r[h]:.6g}" if isinstance(r[h], float) else str(r[h]) for h in headers]
        for r in rows
    ]
    widths = [max(len(line[i]) for line in table) for i in range(len(headers))]
    lines = [
        "  ".join(cell.ljust(w) for cell, w in zip(line, widths)) for line in table
    ]
    lines.insert(1, "  ".join("-" * w for w in widths))
    return "\n".join(lines)


def _plot_sweep(name: str, recs: list, out_dir: str) -> str | None:
    pts = [
        (r["extra"]["grid_value"], r["value"], r["ci_low"], r["ci_high"])
        for r in recs
        if r.get("extra", {}).get("grid_value") is not None and r.get("value") is not None
    ]
    if len(pts) < 2:
        return None
    pts.sort()
    xs, ys, lo, hi = zip(*pts)
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.errorbar(xs, ys, yerr=[[y - a for y, a in zip(ys, lo)],
                              [b - y for y, b in zip(ys, hi)]],
                fmt="o-", capsize=3, lw=1)
    ax.set_xlabel(recs[0]["extra"].get("grid_parameter", "parameter"))
    ax.set_ylabel(recs[0].get("operation", "estimate"))
    ax.set_title(name)
    fig.tight_layout()
    path = os.path.join(out_dir, f"sweep_{_safe(name)}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _plot_tail_fit(name: str, rec: dict, out_dir: str) -> str | None:
    extra = rec.get("extra", {})
    grid = extra.get("grid")
    logf = extra.get("log_freq")
    if not grid or not logf:
        return None
    fig, ax = plt.subplots(figsize=(5.5, 3.6))
    ax.plot(grid, logf, "o", ms=4, label="log tail frequency")
    slope = extra.get("slope")
    icept = extra.get("intercept")
    if slope is not None and icept is not None:
        ax.plot(grid, [slope * t + icept for t in grid], "-",
                label=f"fit slope {slope:.3f}, R2 {extra.get('r_squared', float('nan')):.3f}")
    ax.set_xlabel("time")
    ax.set_ylabel("log frequency of later extinction")
    ax.set_title(name)
    ax.legend(fontsize=8)
    fig.tight_layout()
    path = os.path.join(out_dir, f"tailfit_{_safe(name)}.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _plot_summary(rows: list, out_dir: str) -> str | None:
    scalars = [r for r in rows if r["value"] != "" and r["grid_value"] == ""]
    if not scalars:
        return None
    fig, ax = plt.subplots(figsize=(6.5, 0.45 * len(scalars) + 1.6))
    labels = [f'{r["experiment"]}:{r["operation"]}' for r in scalars]
    ys = range(len(scalars))
    vals = [r["value"] for r in scalars]
    err_lo = [v - r["ci_low"] if isinstance(r["ci_low"], float) else 0
              for v, r in zip(vals, scalars)]
    err_hi = [r["ci_high"] - v if isinstance(r["ci_high"], float) else 0
              for v, r in zip(vals, scalars)]
    ax.errorbar(vals, ys, xerr=[err_lo, err_hi], fmt="o", capsize=3)
    ax.set_yticks(list(ys))
    ax.set_yticklabels(labels, fontsize=8)
    ax.invert_yaxis()
    ax.set_xlabel("estimate with 95% interval")
    fig.tight_layout()
    path = os.path.join(out_dir, "estimates.png")
    fig.savefig(path, dpi=150)
    plt.close(fig)
    return path


def _safe(name: str) -> str:
    return "".join(c if c.isalnum() or c in "-_" else "_" for c in name)


def generate_report(records_path: str, out_dir: str) -> dict:
    """Aggregate records into CSV, a printed table, and PNG figures."""
    records = read_records(records_path)
    os.makedirs(out_dir, exist_ok=True)
    versions = {r.get("version") for r in records}
    warnings = []
    if len(versions) > 1:
        warnings.append(f"mixed record versions {sorted(str(v) for v in versions)}; "
                        "merging best effort")

    rows = [_row(r) for r in records]
    csv_path = os.path.join(out_dir, "report.csv")
    with open(csv_path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        writer.writerows(rows)

    figures = []
    by_experiment = defaultdict(list)
    for rec in records:
        by_experiment[rec.get("experiment", "")].append(rec)
    for name, recs in by_experiment.items():
        sweep_recs = [r for r in recs if "grid_value" in r.get("extra", {})]
        if sweep_recs:
            path = _plot_sweep(name, sweep_recs, out_dir)
            if path:
                figures.append(path)
        for rec in recs:
            if rec.get("operation") == "extinction-tail":
                path = _plot_tail_fit(name, rec, out_dir)
                if path:
                    figures.append(path)
    summary = _plot_summary(rows, out_dir)
    if summary:
        figures.append(summary)

    return {
        "table": _text_table(rows),
        "csv": csv_path,
        "figures": figures,
        "warnings": warnings,
        "n_records": len(records),
    }
