# src/datagen.py
"""
Datasets for the lab: Gaussian class mixtures clamped to a box, the
shipped "hard-class" fixture, stratified validation splits and CSV I/O.

CSV contract:
  header  label,x0,x1,...,x{d-1}
  rows    integer label, decimal features (written with 17 significant digits)
"""

import csv
import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np

from .error_kinds import (
    CSV_MALFORMED,
    CSV_NO_ROWS,
    DIMENSION_MISMATCH,
    LABEL_OUT_OF_RANGE,
    MISSING_CLASS,
    NON_FINITE,
    OUT_OF_RANGE,
    LabError,
)

LOG = logging.getLogger("watlab.datagen")

FEATURE_FORMAT = ".17g"


@dataclass(frozen=True)
class MixtureSpec:
    means: Tuple[Tuple[float, ...], ...]
    stds: Tuple[float, ...]
    counts: Tuple[int, ...]
    box: Optional[Tuple[float, float]] = (0.0, 1.0)
    seed: int = 0

    def __post_init__(self):
        means = np.asarray(self.means, dtype=np.float64)
        if means.ndim != 2 or means.shape[0] < 1 or means.shape[1] < 1:
            raise LabError(DIMENSION_MISMATCH, "means must be a non-empty K x d table")
        if not np.all(np.isfinite(means)):
            raise LabError(NON_FINITE, "means must be finite")
        k = means.shape[0]
        if len(self.stds) != k or len(self.counts) != k:
            raise LabError(DIMENSION_MISMATCH, f"need {k} stds and counts")
        for c, s in zip(self.counts, self.stds):
            if int(c) != c or int(c) < 1:
                raise LabError(OUT_OF_RANGE, f"class counts must be integers >= 1, got {c}")
            if not (math.isfinite(s) and s > 0):
                raise LabError(OUT_OF_RANGE, f"class stds must be > 0, got {s}")
        if self.box is not None and float(self.box[0]) >= float(self.box[1]):
            raise LabError(OUT_OF_RANGE, f"box {self.box} is empty")
        object.__setattr__(self, "means", tuple(tuple(float(v) for v in row) for row in means))
        object.__setattr__(self, "stds", tuple(float(s) for s in self.stds))
        object.__setattr__(self, "counts", tuple(int(c) for c in self.counts))
        if self.box is not None:
            object.__setattr__(self, "box", (float(self.box[0]), float(self.box[1])))

    @property
    def n_classes(self):
        return len(self.counts)

    @property
    def dim(self):
        return len(self.means[0])

    def to_dict(self):
        return {
            "means": [list(m) for m in self.means],
            "stds": list(self.stds),
            "counts": list(self.counts),
            "box": list(self.box) if self.box is not None else None,
            "seed": self.seed,
        }

    @classmethod
    def from_dict(cls, data):
        box = data.get("box", [0.0, 1.0])
        return cls(
            means=tuple(tuple(m) for m in data["means"]),
            stds=tuple(data["stds"]),
            counts=tuple(data["counts"]),
            box=tuple(box) if box is not None else None,
            seed=int(data.get("seed", 0)),
        )

    def digest(self):
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()[:16]


@dataclass(frozen=True, eq=False)
class Dataset:
    inputs: np.ndarray
    labels: np.ndarray
    n_classes: int
    provenance: str = ""
    class_indices: List[np.ndarray] = field(init=False, repr=False)

    def __post_init__(self):
        x = np.array(self.inputs, dtype=np.float64)
        y = np.array(self.labels)
        if x.ndim != 2:
            raise LabError(DIMENSION_MISMATCH, f"inputs must be n x d, got shape {x.shape}")
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise LabError(DIMENSION_MISMATCH, "labels must be a vector matching the inputs")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise LabError(LABEL_OUT_OF_RANGE, "labels must be integers")
        y = y.astype(np.int64)
        k = int(self.n_classes)
        if k < 1:
            raise LabError(OUT_OF_RANGE, "a dataset needs at least one class")
        if y.size and (y.min() < 0 or y.max() >= k):
            raise LabError(LABEL_OUT_OF_RANGE, f"labels must lie in [0, {k - 1}]")
        if not np.all(np.isfinite(x)):
            raise LabError(NON_FINITE, "inputs must be finite")
        x.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        object.__setattr__(self, "n_classes", k)
        object.__setattr__(self, "class_indices", [np.flatnonzero(y == c) for c in range(k)])

    @property
    def n(self):
        return int(self.labels.shape[0])

    @property
    def dim(self):
        return int(self.inputs.shape[1])

    def class_counts(self):
        return [int(idx.size) for idx in self.class_indices]

    def is_balanced(self):
        return len(set(self.class_counts())) == 1

    def require_all_classes(self):
        for c, idx in enumerate(self.class_indices):
            if idx.size == 0:
                raise LabError(MISSING_CLASS, f"class {c} has no examples ({self.provenance or 'dataset'})")

    def subset(self, index, provenance=None):
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.inputs[index],
            self.labels[index],
            self.n_classes,
            provenance if provenance is not None else self.provenance,
        )

    def same_as(self, other):
        return (
            self.n_classes == other.n_classes
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.inputs, other.inputs)
        )


def gaussian_mixture(spec):
    """Exact per-class counts; class blocks in label order; clamped to the box."""
    rng = np.random.default_rng(spec.seed)
    blocks, labels = [], []
    for c in range(spec.n_classes):
        pts = rng.normal(spec.means[c], spec.stds[c], size=(spec.counts[c], spec.dim))
        blocks.append(pts)
        labels.append(np.full(spec.counts[c], c, dtype=np.int64))
    x = np.vstack(blocks)
    if spec.box is not None:
        x = np.clip(x, spec.box[0], spec.box[1])
    return Dataset(x, np.concatenate(labels), spec.n_classes, f"mixture:{spec.digest()}")


def hard_class_spec(per_class=500, seed=0, radius=0.75, easy_std=0.03, hard_factor=3.0):
    """
    Three classes on a quarter circle at 30, 45 and 60 degrees. Class 1 sits
    between the others with hard_factor times their spread.
    """
    angles = np.deg2rad([30.0, 45.0, 60.0])
    means = tuple((radius * math.cos(a), radius * math.sin(a)) for a in angles)
    stds = (easy_std, hard_factor * easy_std, easy_std)
    return MixtureSpec(means=means, stds=stds, counts=(per_class,) * 3, box=(0.0, 1.0), seed=seed)


HARD_CLASS = 1


def stratified_split(data, per_class_val):
    """First per_class_val members of every class go to validation."""
    per_class_val = int(per_class_val)
    if per_class_val < 0:
        raise LabError(OUT_OF_RANGE, "per_class_val must be >= 0")
    val_idx, train_idx = [], []
    for c, idx in enumerate(data.class_indices):
        if idx.size <= per_class_val:
            raise LabError(
                MISSING_CLASS,
                f"class {c} has {idx.size} members, need more than {per_class_val} for the split",
            )
        val_idx.append(idx[:per_class_val])
        train_idx.append(idx[per_class_val:])
    val = np.sort(np.concatenate(val_idx))
    train = np.sort(np.concatenate(train_idx))
    return (
        data.subset(train, f"{data.provenance}#train"),
        data.subset(val, f"{data.provenance}#val"),
    )


def write_csv_dataset(data, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = ["label"] + [f"x{j}" for j in range(data.dim)]
    with path.open("w", encoding="utf-8", newline="") as f:
        w = csv.writer(f)
        w.writerow(header)
        for label, row in zip(data.labels, data.inputs):
            w.writerow([int(label)] + [format(float(v), FEATURE_FORMAT) for v in row])
    return path


def load_csv_dataset(path):
    """
    Parse a dataset CSV. K is the number of distinct labels, which must be
    exactly 0..K-1; errors name the offending line.
    """
    path = Path(path)
    if not path.is_file():
        raise LabError(CSV_MALFORMED, f"{path}: file not found")
    with path.open("r", encoding="utf-8", newline="") as f:
        reader = csv.reader(f)
        header = next(reader, None)
        if not header:
            raise LabError(CSV_MALFORMED, f"{path}: line 1: missing header")
        header = [h.strip() for h in header]
        d = len(header) - 1
        if d < 1 or header[0] != "label" or header[1:] != [f"x{j}" for j in range(d)]:
            raise LabError(CSV_MALFORMED, f"{path}: line 1: header must be label,x0,...,x{{d-1}}")

        labels, rows, lines = [], [], []
        for line_no, row in enumerate(reader, start=2):
            if not row or all(not cell.strip() for cell in row):
                continue
            if len(row) != d + 1:
                raise LabError(CSV_MALFORMED, f"{path}: line {line_no}: expected {d + 1} fields, got {len(row)}")
            try:
                label = int(row[0].strip(), 10)
            except ValueError:
                raise LabError(CSV_MALFORMED, f"{path}: line {line_no}: label {row[0]!r} is not an integer")
            try:
                feats = [float(cell) for cell in row[1:]]
            except ValueError:
                raise LabError(CSV_MALFORMED, f"{path}: line {line_no}: non-numeric feature")
            if not all(math.isfinite(v) for v in feats):
                raise LabError(CSV_MALFORMED, f"{path}: line {line_no}: non-finite feature")
            labels.append(label)
            rows.append(feats)
            lines.append(line_no)

    if not rows:
        raise LabError(CSV_NO_ROWS, f"{path}: no data rows")

    k = len(set(labels))
    for label, line_no in zip(labels, lines):
        if not 0 <= label < k:
            raise LabError(
                CSV_MALFORMED,
                f"{path}: line {line_no}: label {label} outside 0..{k - 1} (labels must be contiguous)",
            )
    LOG.debug("loaded %d rows, K=%d, d=%d from %s", len(rows), k, d, path)
    return Dataset(np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64), k, str(path))
