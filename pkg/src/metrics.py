# src/metrics.py
"""
Class-wise accuracies, the rho measurement and class-wise variance.

Accuracies are fractions everywhere in the library; percentages exist
only in rendered reports.
"""

import logging
import math
from dataclasses import dataclass
from typing import List

import numpy as np

from .adversary import CLOSED_FORM, linear_worst_case_margins, pgd_attack_batch
from .error_kinds import EMPTY_INPUT, OUT_OF_RANGE, UNSUPPORTED_MODEL, LabError
from .models import LINEAR, predict

LOG = logging.getLogger("watlab.metrics")

NATURAL = "natural"


def robust_kind(attack_name):
    return f"robust:{attack_name}"


@dataclass(frozen=True)
class AccSummary:
    per_class: List[float]
    average: float
    worst: float
    worst_class: int
    kind: str = NATURAL

    def to_dict(self):
        return {
            "kind": self.kind,
            "per_class": list(self.per_class),
            "average": self.average,
            "worst": self.worst,
            "worst_class": self.worst_class,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            per_class=[float(v) for v in data["per_class"]],
            average=float(data["average"]),
            worst=float(data["worst"]),
            worst_class=int(data["worst_class"]),
            kind=data.get("kind", NATURAL),
        )


def summarize(correct, labels, n_classes, kind):
    correct = np.asarray(correct, dtype=bool)
    labels = np.asarray(labels, dtype=np.int64)
    per_class = []
    for c in range(n_classes):
        members = correct[labels == c]
        if members.size == 0:
            raise LabError(EMPTY_INPUT, f"class {c} has no test examples")
        per_class.append(float(members.mean()))
    worst_class = int(np.argmin(per_class))
    return AccSummary(
        per_class=per_class,
        average=float(correct.mean()),
        worst=per_class[worst_class],
        worst_class=worst_class,
        kind=kind,
    )


def class_accuracies(params, test, attack=None, rng=None):
    """
    Natural accuracy without an attack. With one, an example counts only if
    both its clean and attacked predictions are right; the closed-form
    method counts it when the exact worst-case margin is positive.
    """
    test.require_all_classes()
    X, Y = test.inputs, test.labels
    clean_ok = predict(params, X) == Y
    if attack is None:
        return summarize(clean_ok, Y, test.n_classes, NATURAL)

    if attack.method == CLOSED_FORM:
        if params.kind != LINEAR:
            raise LabError(UNSUPPORTED_MODEL, "closed-form robust accuracy needs a linear model")
        _, worst = linear_worst_case_margins(params.linear, X, Y, attack.epsilon)
        ok = clean_ok & (worst > 0)
    else:
        x_adv = pgd_attack_batch(params, X, Y, attack, rng)
        ok = clean_ok & (predict(params, x_adv) == Y)
    return summarize(ok, Y, test.n_classes, robust_kind(attack.name))


def rho(base, treated):
    """Relative worst-class gain minus relative average loss against a baseline."""
    if base.kind != treated.kind:
        raise LabError(OUT_OF_RANGE, f"cannot compare {base.kind!r} with {treated.kind!r}")
    if base.worst <= 0 or base.average <= 0:
        raise LabError(OUT_OF_RANGE, "rho needs a baseline with positive worst and average accuracy")
    return (treated.worst - base.worst) / base.worst - (base.average - treated.average) / base.average


def rho_from_values(base_avg, base_worst, treated_avg, treated_worst):
    return rho(
        AccSummary([], base_avg, base_worst, 0, NATURAL),
        AccSummary([], treated_avg, treated_worst, 0, NATURAL),
    )


def cv(per_class):
    """Population variance of per-class accuracies, exactly summed."""
    a = [float(v) for v in np.asarray(per_class, dtype=np.float64).reshape(-1)]
    if not a:
        raise LabError(EMPTY_INPUT, "cv of an empty vector")
    # shifting by the minimum keeps a constant vector at exactly zero
    lo = min(a)
    mean = lo + math.fsum(v - lo for v in a) / len(a)
    return math.fsum((v - mean) ** 2 for v in a) / len(a)
