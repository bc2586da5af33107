"""
Renderers for stored run records. Nothing here retrains or re-evaluates:
every table is derived from record.json alone.

Formats:
  csv       summary.csv (seed x method x kind) and classwise.csv (long form, for plotting)
  json      summary.json
  markdown  report.md
"""

import logging
import math
from pathlib import Path
from typing import List

import pandas as pd

from .error_kinds import OUT_OF_RANGE, LabError
from .run_store import REPORT_FILE, dump_json, load_record

LOG = logging.getLogger("watlab.report")

FORMATS = ("csv", "json", "markdown")

SUMMARY_COLUMNS = ["seed", "method", "kind", "average", "worst", "worst_class", "rho", "cv"]


def _pct(v):
    return f"{100.0 * v:.1f}"


def _num(v, fmt):
    if v is None or (isinstance(v, float) and math.isnan(v)):
        return "n/a"
    return format(v, fmt)


def _section(title, level=2):
    return ["", "#" * level + " " + title, ""]


def summary_frame(record):
    rows = []
    for entry in record.get("seeds", []):
        for method, result in entry.get("methods", {}).items():
            for kind, s in result.get("accuracies", {}).items():
                rows.append(
                    {
                        "seed": entry["seed"],
                        "method": method,
                        "kind": kind,
                        "average": s["average"],
                        "worst": s["worst"],
                        "worst_class": s["worst_class"],
                        "rho": entry.get("rho", {}).get(method, {}).get(kind),
                        "cv": result.get("cv", {}).get(kind),
                    }
                )
    return pd.DataFrame(rows, columns=SUMMARY_COLUMNS)


def classwise_frame(record):
    rows = []
    for entry in record.get("seeds", []):
        for method, result in entry.get("methods", {}).items():
            for kind, s in result.get("accuracies", {}).items():
                for c, acc in enumerate(s["per_class"]):
                    rows.append({"seed": entry["seed"], "method": method, "kind": kind, "class": c, "accuracy": acc})
    return pd.DataFrame(rows, columns=["seed", "method", "kind", "class", "accuracy"])


def accuracy_table_markdown(entry) -> List[str]:
    lines = [
        "| method | kind | avg % | worst % | worst class | rho | CV |",
        "|---|---|---|---|---|---|---|",
    ]
    for method, result in entry.get("methods", {}).items():
        if result.get("status") != "ok":
            lines.append(f"| {method} | failed | | | | | |")
            continue
        for kind, s in result.get("accuracies", {}).items():
            r = entry.get("rho", {}).get(method, {}).get(kind)
            lines.append(
                f"| {method} | {kind} | {_pct(s['average'])} | {_pct(s['worst'])} | {s['worst_class']} "
                f"| {_num(r, '.3f')} | {_num(result.get('cv', {}).get(kind), '.4f')} |"
            )
    return lines


def _bounds_markdown(entry) -> List[str]:
    lines = []
    for method, result in entry.get("methods", {}).items():
        bounds = result.get("bounds")
        if not bounds:
            continue
        t3 = bounds.get("theorem3", {})
        t2 = bounds.get("theorem2", {})
        if not lines:
            lines = [
                "| method | E_mean | U | c | rhs (linear) | norm cap exceeded | min dictionary rhs |",
                "|---|---|---|---|---|---|---|",
            ]
        if "skipped" in t3:
            t3_cells = "n/a | n/a | n/a | n/a | n/a"
        else:
            t3_cells = (
                f"{t3['e_mean']:.4f} | {t3['u']:.4f} | {t3['c']:.4f} | {t3['rhs']:.4f} | {t3['norm_cap_exceeded']}"
            )
        t2_min = min(t2["rhs"]) if t2.get("rhs") else None
        lines.append(f"| {method} | {t3_cells} | {_num(t2_min, '.4f')} |")
    if lines:
        lines.append("")
        lines.append("Complexity terms over training snapshots: dictionary lower bound of the complexity term.")
    return lines


def render_markdown(record):
    cfg = record.get("config", {})
    lines = [f"# {cfg.get('name', 'experiment')}", ""]
    lines.append(f"- tool version: {record.get('tool_version')}")
    lines.append(f"- status: {record.get('status')}")
    lines.append(f"- seeds: {', '.join(str(e['seed']) for e in record.get('seeds', []))}")
    lines.append(f"- baseline: {cfg.get('baseline')}")
    for entry in record.get("seeds", []):
        lines += _section(f"Seed {entry['seed']}")
        lines += accuracy_table_markdown(entry)
        bounds = _bounds_markdown(entry)
        if bounds:
            lines += _section(f"Bounds (seed {entry['seed']})", level=3)
            lines += bounds

    agg = record.get("aggregate")
    if agg and agg.get("counts"):
        lines += _section(f"Across {agg['n_seeds']} seeds ({agg['primary_kind']})")
        lines.append("| method | evaluated | disparity >= 10 pts | worst > baseline | rho > 0 |")
        lines.append("|---|---|---|---|---|")
        for method, c in agg["counts"].items():
            lines.append(f"| {method} | {c['ok']} | {c['disparity']} | {c['worst_gain']} | {c['rho_positive']} |")
    return "\n".join(lines) + "\n"


def sweep_markdown(table, summary=None):
    cols = [c for c in table.columns if c not in ("status",)]
    lines = ["# eta sweep", "", "| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    for _, row in table.iterrows():
        cells = []
        for c in cols:
            v = row[c]
            if c in ("eta", "seed"):
                cells.append(f"{v:g}")
            elif c.startswith("rho_"):
                cells.append(_num(float(v), ".3f"))
            else:
                cells.append(_pct(v) if not math.isnan(v) else "n/a")
        lines.append("| " + " | ".join(cells) + " |")
    if summary:
        lines += _section("Direction", level=2)
        lines.append(
            f"- worst {summary['kind']} at eta={summary['eta_high']:g} >= eta={summary['eta_low']:g}: "
            f"{summary['worst_high_ge_low']}/{summary['seeds']} seeds"
        )
        lines.append(
            f"- average {summary['kind']} at eta={summary['eta_low']:g} >= eta={summary['eta_high']:g}: "
            f"{summary['avg_low_ge_high']}/{summary['seeds']} seeds"
        )
    return "\n".join(lines) + "\n"


def emit_report(run_dir, fmt="markdown"):
    """Re-render tables from the stored record; returns the written paths."""
    if fmt not in FORMATS:
        raise LabError(OUT_OF_RANGE, f"unknown report format {fmt!r}; choose from {FORMATS}")
    run_dir = Path(run_dir)
    record = load_record(run_dir)
    if fmt == "csv":
        summary_path, classwise_path = run_dir / "summary.csv", run_dir / "classwise.csv"
        summary_frame(record).to_csv(summary_path, index=False)
        classwise_frame(record).to_csv(classwise_path, index=False)
        written = [summary_path, classwise_path]
    elif fmt == "json":
        path = run_dir / "summary.json"
        frame = summary_frame(record)
        rows = [{k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in r.items()} for r in frame.to_dict(orient="records")]
        path.write_text(dump_json({"rows": rows, "aggregate": record.get("aggregate")}), encoding="utf-8")
        written = [path]
    else:
        path = run_dir / REPORT_FILE
        path.write_text(render_markdown(record), encoding="utf-8")
        written = [path]
    LOG.info("wrote %s", ", ".join(str(p) for p in written))
    return written
