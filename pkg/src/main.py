"""
Experiment runner: trains every configured method per seed, evaluates
natural and robust class-wise accuracy, computes rho/CV and the bound
reports, and persists everything into a run directory.
"""

import logging
import math
import time
from dataclasses import replace
from pathlib import Path

import numpy as np
import pandas as pd

from . import __version__
from .adversary import CLOSED_FORM
from .bounds import theorem2_report, theorem3_terms
from .datagen import MixtureSpec, gaussian_mixture, hard_class_spec, load_csv_dataset, stratified_split
from .error_kinds import CONFIG_INVALID, LabError
from .experiment_config import MethodSpec, load_experiment_config
from .hedge import LossHistory, audit_lemma1, audit_no_regret
from .metrics import NATURAL, AccSummary, class_accuracies, cv, rho, robust_kind
from .models import LINEAR
from .report import render_markdown, sweep_markdown
from .run_store import (
    REPORT_FILE,
    accuracy_frame,
    load_record,
    new_run_dir,
    write_json_atomic,
    write_record,
    write_tables,
)
from .trainer import WAT, TrainingAborted, TrainRecord, train

LOG = logging.getLogger("watlab.main")

DISPARITY_GAP = 0.10


def build_splits(cfg, seed):
    """(train, val, test) for one seed; csv data is the same for every seed."""
    data = cfg.data
    kind = data["kind"]
    if kind == "csv":
        full = load_csv_dataset(data["train_path"])
        train_split, val_split = stratified_split(full, data["val_per_class"])
        return train_split, val_split, load_csv_dataset(data["test_path"])

    per_class = int(data["train_per_class"]) + int(data["val_per_class"])
    test_seed = seed + int(data["test_seed_offset"])
    if kind == "hard_class":
        full_spec = hard_class_spec(per_class=per_class, seed=seed)
        test_spec = hard_class_spec(per_class=int(data["test_per_class"]), seed=test_seed)
    else:
        k = len(data["means"])
        full_spec = MixtureSpec(tuple(map(tuple, data["means"])), tuple(data["stds"]), (per_class,) * k, seed=seed)
        test_spec = MixtureSpec(
            tuple(map(tuple, data["means"])), tuple(data["stds"]), (int(data["test_per_class"]),) * k, seed=test_seed
        )
    train_split, val_split = stratified_split(gaussian_mixture(full_spec), data["val_per_class"])
    return train_split, val_split, gaussian_mixture(test_spec)


def evaluate(params, test, attacks, seed):
    """AccSummary per kind: natural first, then one per evaluation attack."""
    out = {NATURAL: class_accuracies(params, test)}
    for i, attack in enumerate(attacks):
        if attack.method == CLOSED_FORM and params.kind != LINEAR:
            LOG.info("skipping closed-form attack %s for a %s model", attack.name, params.kind)
            continue
        rng = np.random.default_rng([seed, 1, i])
        out[robust_kind(attack.name)] = class_accuracies(params, test, attack, rng)
    return out


def _bound_reports(record, train_split, cfg, seed):
    params = record.selected_params
    if params is None or params.kind != LINEAR:
        return None
    rng = np.random.default_rng([seed, 2])
    out = {}
    try:
        out["theorem3"] = theorem3_terms(params, train_split, cfg.bounds, rng).to_dict()
    except LabError as exc:
        LOG.warning("seed=%s: theorem3 skipped (%s)", seed, exc)
        out["theorem3"] = {"skipped": str(exc)}
    dictionary = [p.linear for _, p in sorted(record.snapshots.items())]
    out["theorem2"] = theorem2_report(dictionary, train_split, cfg.bounds, rng).to_dict()
    return out


def _train_method(cfg, method, seed, train_split, val_split):
    tcfg = cfg.train_config(method, seed)
    try:
        return train(tcfg, train_split, val_split)
    except TrainingAborted as exc:
        LOG.warning("seed=%s method=%s failed: %s", seed, method.name, exc)
        return exc.record


def run_method(cfg, method, seed, splits):
    train_split, val_split, test = splits
    record = _train_method(cfg, method, seed, train_split, val_split)
    result = {"strategy": method.strategy, "status": record.status, "train": record.to_dict()}
    if record.status != "ok":
        return result
    accs = evaluate(record.selected_params, test, cfg.eval_attacks, seed)
    result["accuracies"] = {kind: s.to_dict() for kind, s in accs.items()}
    result["cv"] = {kind: cv(s.per_class) for kind, s in accs.items()}
    result["bounds"] = _bound_reports(record, train_split, cfg, seed)
    LOG.info(
        "seed=%s method=%s epoch*=%s %s",
        seed,
        method.name,
        record.selected_epoch,
        " ".join(f"{kind}={s.average:.3f}/{s.worst:.3f}" for kind, s in accs.items()),
    )
    return result


def rho_table(methods, baseline):
    """rho of every method against the baseline, per accuracy kind."""
    base = methods.get(baseline, {})
    if "accuracies" not in base:
        return {}
    out = {}
    for name, result in methods.items():
        if "accuracies" not in result:
            continue
        row = {}
        for kind, summary in result["accuracies"].items():
            if kind not in base["accuracies"]:
                continue
            try:
                row[kind] = rho(AccSummary.from_dict(base["accuracies"][kind]), AccSummary.from_dict(summary))
            except LabError as exc:
                LOG.warning("rho %s/%s undefined: %s", name, kind, exc)
                row[kind] = None
        out[name] = row
    return out


def run_seed(cfg, seed):
    splits = build_splits(cfg, seed)
    methods = {m.name: run_method(cfg, m, seed, splits) for m in cfg.methods}
    status = "ok" if all(r["status"] == "ok" for r in methods.values()) else "failed"
    return {
        "seed": seed,
        "status": status,
        "data": {"train": splits[0].provenance, "val": splits[1].provenance, "test": splits[2].provenance},
        "methods": methods,
        "rho": rho_table(methods, cfg.baseline),
    }


def primary_kind(cfg):
    return robust_kind(cfg.eval_attacks[0].name) if cfg.eval_attacks else NATURAL


def aggregate(seed_entries, cfg):
    """Per-method success counts over seeds plus seed-mean accuracies."""
    kind = primary_kind(cfg)
    counts = {}
    for entry in seed_entries:
        base = entry["methods"].get(cfg.baseline, {}).get("accuracies", {}).get(kind)
        for name, result in entry["methods"].items():
            c = counts.setdefault(name, {"ok": 0, "disparity": 0, "worst_gain": 0, "rho_positive": 0})
            acc = result.get("accuracies", {}).get(kind)
            if acc is None:
                continue
            c["ok"] += 1
            if acc["average"] - acc["worst"] >= DISPARITY_GAP:
                c["disparity"] += 1
            if base is not None and acc["worst"] > base["worst"]:
                c["worst_gain"] += 1
            r = entry["rho"].get(name, {}).get(kind)
            if r is not None and r > 0:
                c["rho_positive"] += 1

    frame = accuracy_frame({"seeds": seed_entries})
    means = {}
    if not frame.empty:
        grouped = frame.groupby(["method", "kind"])[["average", "worst"]].mean()
        for (method, k), row in grouped.iterrows():
            means.setdefault(method, {})[k] = {"average": float(row["average"]), "worst": float(row["worst"])}
    return {"n_seeds": len(seed_entries), "primary_kind": kind, "baseline": cfg.baseline, "counts": counts, "means": means}


def _assemble(cfg, seed_entries, started):
    status = "ok" if all(e["status"] == "ok" for e in seed_entries) else "failed"
    return {
        "tool_version": __version__,
        "config": cfg.to_dict(),
        "status": status,
        "seeds": seed_entries,
        "aggregate": aggregate(seed_entries, cfg),
        "wall_clock_seconds": round(time.perf_counter() - started, 3),
    }


def run_experiment(config_path, run_dir=None, seeds=None):
    """Train, evaluate and persist; returns (record, run_dir)."""
    cfg = load_experiment_config(config_path)
    if seeds:
        cfg = replace(cfg, seeds=tuple(int(s) for s in seeds))
    run_dir = Path(run_dir) if run_dir is not None else new_run_dir(cfg.name)
    run_dir.mkdir(parents=True, exist_ok=True)
    LOG.info("run %s -> %s", cfg.name, run_dir)

    started = time.perf_counter()
    entries = []
    for seed in cfg.seeds:
        entry = run_seed(cfg, seed)
        entries.append(entry)
        if len(cfg.seeds) > 1:
            write_json_atomic(run_dir / "seeds" / f"seed_{seed}.json", entry)

    record = _assemble(cfg, entries, started)
    write_record(run_dir, record)
    write_tables(run_dir, record)
    (run_dir / REPORT_FILE).write_text(render_markdown(record), encoding="utf-8")
    if record["status"] != "ok":
        LOG.warning("run %s finished with failed methods", run_dir)
    else:
        LOG.info("run %s ok in %.1fs", run_dir, record["wall_clock_seconds"])
    return record, run_dir


def _sweep_row(eta, seed, result, base_result, attacks):
    accs = result.get("accuracies", {})
    row = {"eta": eta, "seed": seed, "status": result["status"]}
    kinds = [NATURAL] + [robust_kind(a.name) for a in attacks]
    for kind in kinds:
        label = kind.split(":", 1)[-1]
        summary = accs.get(kind)
        row[f"avg_{label}"] = summary["average"] if summary else math.nan
        row[f"worst_{label}"] = summary["worst"] if summary else math.nan
        base = base_result.get("accuracies", {}).get(kind)
        value = math.nan
        if summary and base:
            try:
                value = rho(AccSummary.from_dict(base), AccSummary.from_dict(summary))
            except LabError:
                pass
        row[f"rho_{label}"] = value
    return row


def sweep_summary(table, cfg):
    """Seeds where the largest eta keeps the worst class at least as well, and the smallest keeps the average."""
    label = primary_kind(cfg).split(":", 1)[-1]
    lo, hi = min(table["eta"]), max(table["eta"])
    by_seed = table.set_index(["seed", "eta"])
    worst_ok = avg_ok = 0
    seeds = sorted(set(table["seed"]))
    for seed in seeds:
        a, b = by_seed.loc[(seed, lo)], by_seed.loc[(seed, hi)]
        worst_ok += int(b[f"worst_{label}"] >= a[f"worst_{label}"])
        avg_ok += int(a[f"avg_{label}"] >= b[f"avg_{label}"])
    return {"kind": label, "eta_low": lo, "eta_high": hi, "seeds": len(seeds), "worst_high_ge_low": worst_ok, "avg_low_ge_high": avg_ok}


def sweep_eta(config_path, etas=None, run_dir=None):
    """One WAT run per eta per seed on shared data; returns the comparison table."""
    cfg = load_experiment_config(config_path)
    etas = tuple(dict.fromkeys(float(e) for e in (etas if etas is not None else cfg.sweep_etas)))
    if not etas or any(not math.isfinite(e) or e < 0 for e in etas):
        raise LabError(CONFIG_INVALID, f"etas must be a non-empty list of values >= 0, got {list(etas)}")
    run_dir = Path(run_dir) if run_dir is not None else new_run_dir(f"{cfg.name}-sweep")
    run_dir.mkdir(parents=True, exist_ok=True)

    rows = []
    for seed in cfg.seeds:
        splits = build_splits(cfg, seed)
        base_result = run_method(cfg, cfg.method(cfg.baseline), seed, splits)
        for eta in etas:
            method = MethodSpec(name=f"wat_eta={eta:g}", strategy=WAT, eta=eta)
            result = run_method(cfg, method, seed, splits)
            rows.append(_sweep_row(eta, seed, result, base_result, cfg.eval_attacks))

    table = pd.DataFrame(rows)
    summary = sweep_summary(table, cfg) if len(etas) > 1 else None
    table.to_csv(run_dir / "sweep.csv", index=False)
    write_json_atomic(
        run_dir / "sweep.json",
        {"tool_version": __version__, "config": cfg.to_dict(), "etas": list(etas), "rows": rows, "summary": summary},
    )
    (run_dir / "sweep.md").write_text(sweep_markdown(table, summary), encoding="utf-8")
    LOG.info("sweep over %d etas x %d seeds -> %s", len(etas), len(cfg.seeds), run_dir)
    return table, run_dir


def audit_run(run_dir):
    """Re-run both auditors on every Hedge-driven training record of a run."""
    record = load_record(run_dir)
    results = []
    for entry in record.get("seeds", []):
        for name, result in entry.get("methods", {}).items():
            if result.get("strategy") != WAT:
                continue
            tr = TrainRecord.from_dict(result["train"])
            eta = float(tr.config["eta"])
            if not tr.hedge_inputs or eta <= 0:
                continue
            history = LossHistory(eta)
            for losses in tr.hedge_inputs:
                history.append(losses)
            report = audit_no_regret(history, tr.weights)
            costs = history.as_matrix()
            lemma = [audit_lemma1(costs, tr.weights, eta, k) for k in range(costs.shape[1])]
            results.append(
                {
                    "seed": entry["seed"],
                    "method": name,
                    "no_regret": report.to_dict(),
                    "violation": report.all_premises_hold and not report.inequality_holds,
                    "lemma": [r.to_dict() for r in lemma],
                    "lemma_holds": all(r.holds for r in lemma),
                }
            )
    return {"runs": results, "violations": sum(1 for r in results if r["violation"])}
