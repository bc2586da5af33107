"""
Run directory persistence: record.json plus the tabular CSV views.

A run directory holds
  record.json    full ExperimentRecord (schema versioned)
  accuracy.csv   one row per seed x method x accuracy kind, one column per class
  weights.csv    one row per seed x method x epoch, one column per decision
  report.md      rendered tables (see report.py)
  seeds/         per-seed records for multi-seed runs
"""

import json
import logging
import os
import tempfile
from pathlib import Path

import pandas as pd

from .error_kinds import RECORD_CORRUPT, RECORD_MISSING, RECORD_VERSION, LabError

LOG = logging.getLogger("watlab.store")

SCHEMA_VERSION = "1.0"
RUNS_DIR_ENV = "WATLAB_RUNS_DIR"
DEFAULT_RUNS_DIR = "runs"

RECORD_FILE = "record.json"
ACCURACY_FILE = "accuracy.csv"
WEIGHTS_FILE = "weights.csv"
REPORT_FILE = "report.md"

ACCURACY_ID_HEADERS = ["seed", "method", "kind"]
WEIGHTS_ID_HEADERS = ["seed", "method", "epoch"]

CSV_SCHEMA_DOC = {
    "seed": "Seed the run was trained and evaluated with",
    "method": "Method name from the config (e.g. uniform, wat)",
    "kind": "natural, or robust:<attack name>",
    "class_<c>": "Accuracy (fraction) on test examples with label c",
    "average": "Accuracy over the whole test set",
    "worst": "Lowest per-class accuracy",
    "epoch": "1-based training epoch",
    "w_<k>": "Weight of decision k (0 = average loss, k >= 1 = label k-1)",
}


def runs_root():
    return Path(os.environ.get(RUNS_DIR_ENV) or DEFAULT_RUNS_DIR)


def new_run_dir(name, root=None):
    """First free <root>/<name>-NNN directory."""
    root = Path(root) if root is not None else runs_root()
    root.mkdir(parents=True, exist_ok=True)
    i = 1
    while (root / f"{name}-{i:03d}").exists():
        i += 1
    path = root / f"{name}-{i:03d}"
    path.mkdir()
    return path


def dump_json(data):
    return json.dumps(data, indent=2, sort_keys=True) + "\n"


def write_json_atomic(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmpname = tempfile.mkstemp(prefix=path.stem + ".", suffix=".tmp", dir=str(path.parent))
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as f:
            f.write(dump_json(data))
        os.replace(tmpname, path)
    except Exception:
        if os.path.exists(tmpname):
            os.unlink(tmpname)
        raise
    return path


def write_record(run_dir, record):
    record = dict(record)
    record.setdefault("schema_version", SCHEMA_VERSION)
    return write_json_atomic(Path(run_dir) / RECORD_FILE, record)


def load_record(run_dir):
    path = Path(run_dir) / RECORD_FILE
    if not path.exists():
        raise LabError(RECORD_MISSING, f"no {RECORD_FILE} in {run_dir}")
    try:
        with path.open("r", encoding="utf-8") as f:
            record = json.load(f)
    except json.JSONDecodeError as exc:
        raise LabError(RECORD_CORRUPT, f"{path}: {exc}") from exc
    if not isinstance(record, dict):
        raise LabError(RECORD_CORRUPT, f"{path}: record root is not an object")
    version = str(record.get("schema_version", ""))
    major = version.split(".")[0]
    if major != SCHEMA_VERSION.split(".")[0]:
        raise LabError(RECORD_VERSION, f"{path}: unsupported schema version {version!r}")
    _check_content(record, path)
    return record


def _check_content(record, path):
    seeds = record.get("seeds")
    if not isinstance(seeds, list) or not seeds:
        raise LabError(RECORD_CORRUPT, f"{path}: record has no seed entries")
    for i, entry in enumerate(seeds):
        if not isinstance(entry, dict) or "seed" not in entry:
            raise LabError(RECORD_CORRUPT, f"{path}: seed entry {i} has no seed")
        methods = entry.get("methods")
        if not isinstance(methods, dict) or not methods:
            raise LabError(RECORD_CORRUPT, f"{path}: seed {entry['seed']} has no method results")
        for name, result in methods.items():
            if not isinstance(result, dict) or "status" not in result:
                raise LabError(RECORD_CORRUPT, f"{path}: seed {entry['seed']} method {name!r} has no status")


def accuracy_frame(record):
    rows = []
    for seed_entry in record.get("seeds", []):
        for method, result in seed_entry.get("methods", {}).items():
            for kind, summary in result.get("accuracies", {}).items():
                row = {"seed": seed_entry["seed"], "method": method, "kind": kind}
                for c, acc in enumerate(summary["per_class"]):
                    row[f"class_{c}"] = acc
                row["average"] = summary["average"]
                row["worst"] = summary["worst"]
                rows.append(row)
    return pd.DataFrame(rows)


def weights_frame(record):
    rows = []
    for seed_entry in record.get("seeds", []):
        for method, result in seed_entry.get("methods", {}).items():
            for epoch, weights in enumerate(result.get("train", {}).get("weights", []), start=1):
                row = {"seed": seed_entry["seed"], "method": method, "epoch": epoch}
                for k, w in enumerate(weights):
                    row[f"w_{k}"] = w
                rows.append(row)
    return pd.DataFrame(rows)


def write_tables(run_dir, record):
    run_dir = Path(run_dir)
    accuracy_frame(record).to_csv(run_dir / ACCURACY_FILE, index=False)
    weights_frame(record).to_csv(run_dir / WEIGHTS_FILE, index=False)
    return run_dir / ACCURACY_FILE, run_dir / WEIGHTS_FILE
