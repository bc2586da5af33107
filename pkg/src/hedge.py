# src/hedge.py
"""
Hedge (multiplicative weights) over K+1 decisions and runtime auditors
for its no-regret guarantees.

Decision 0 is the average loss; decisions 1..K are the classes. Weights
grow exponentially in the cumulative loss of each decision, so the
learner is pushed toward whatever is currently hardest.
"""

import logging
import math
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from .error_kinds import (
    EMPTY_INPUT,
    NON_FINITE,
    OUT_OF_RANGE,
    SIMPLEX_VIOLATION,
    DIMENSION_MISMATCH,
    LabError,
)

LOG = logging.getLogger("watlab.hedge")

SIMPLEX_TOL = 1e-12

# Regime in which the no-regret guarantees are stated.
MAX_AUDITED_ETA = 0.5


@dataclass(frozen=True, eq=False)
class WeightSimplex:
    """Nonnegative weights over K+1 decisions summing to one."""

    weights: np.ndarray

    def __post_init__(self):
        arr = np.array(self.weights, dtype=np.float64).reshape(-1)
        if arr.size == 0:
            raise LabError(EMPTY_INPUT, "weight vector is empty")
        if not np.all(np.isfinite(arr)):
            raise LabError(NON_FINITE, "weight vector has non-finite entries")
        if np.any(arr < 0):
            raise LabError(SIMPLEX_VIOLATION, f"negative weight in {arr.tolist()}")
        total = math.fsum(arr)
        if abs(total - 1.0) > SIMPLEX_TOL:
            raise LabError(SIMPLEX_VIOLATION, f"weights sum to {total!r}, expected 1")
        arr.setflags(write=False)
        object.__setattr__(self, "weights", arr)

    @property
    def n_decisions(self):
        return int(self.weights.size)

    @property
    def n_classes(self):
        return self.n_decisions - 1

    def to_list(self):
        return [float(v) for v in self.weights]

    def __len__(self):
        return self.n_decisions


def as_simplex(weights):
    if isinstance(weights, WeightSimplex):
        return weights
    return WeightSimplex(weights)


def init_weights(n_classes):
    if int(n_classes) < 1:
        raise LabError(OUT_OF_RANGE, f"need at least one class, got {n_classes}")
    n = int(n_classes) + 1
    return WeightSimplex(np.full(n, 1.0 / n))


def _check_eta(eta):
    eta = float(eta)
    if not math.isfinite(eta):
        raise LabError(NON_FINITE, "eta must be finite")
    if eta < 0:
        raise LabError(OUT_OF_RANGE, f"eta must be >= 0, got {eta}")
    return eta


def _softmax_rows(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def hedge_weights(cumulative, eta):
    """
    w_k = exp(eta * s_k) / sum_j exp(eta * s_j), max-shifted.
    eta == 0 is exact uniform.
    """
    s = np.asarray(cumulative, dtype=np.float64).reshape(-1)
    if s.size == 0:
        raise LabError(EMPTY_INPUT, "cumulative loss vector is empty")
    if not np.all(np.isfinite(s)):
        raise LabError(NON_FINITE, "cumulative losses must be finite")
    eta = _check_eta(eta)
    if eta == 0.0:
        return WeightSimplex(np.full(s.size, 1.0 / s.size))
    return WeightSimplex(_softmax_rows(eta * s))


def hedge_trajectory(costs, eta):
    """
    Replay Hedge on a T x n cost matrix. Row t of the result is the weight
    vector played at round t, built from rounds before t (row 0 is uniform).
    """
    c = np.asarray(costs, dtype=np.float64)
    if c.ndim != 2 or c.shape[0] == 0 or c.shape[1] == 0:
        raise LabError(EMPTY_INPUT, "cost history must be a non-empty T x n matrix")
    if not np.all(np.isfinite(c)):
        raise LabError(NON_FINITE, "cost history must be finite")
    eta = _check_eta(eta)
    n = c.shape[1]
    if eta == 0.0:
        return np.full(c.shape, 1.0 / n)
    before = np.vstack([np.zeros((1, n)), np.cumsum(c, axis=0)[:-1]])
    return _softmax_rows(eta * before)


@dataclass
class LossHistory:
    """
    Append-only stream of normalized validation loss vectors fed to Hedge.
    Cumulative totals are kept as running sums.
    """

    eta: float
    rounds: List[np.ndarray] = field(default_factory=list)
    _cumulative: Optional[np.ndarray] = field(default=None, init=False, repr=False)

    def __post_init__(self):
        self.eta = _check_eta(self.eta)
        pending = list(self.rounds)
        self.rounds = []
        for r in pending:
            self.append(r)

    def append(self, losses):
        v = np.array(getattr(losses, "values", losses), dtype=np.float64).reshape(-1)
        if v.size == 0:
            raise LabError(EMPTY_INPUT, "loss vector is empty")
        if not np.all(np.isfinite(v)):
            raise LabError(NON_FINITE, f"round {len(self.rounds) + 1} has non-finite losses")
        if np.any(v < 0):
            raise LabError(OUT_OF_RANGE, f"round {len(self.rounds) + 1} has negative losses")
        if self._cumulative is None:
            self._cumulative = v.copy()
        elif v.size != self._cumulative.size:
            raise LabError(
                DIMENSION_MISMATCH,
                f"loss vector has {v.size} entries, history has {self._cumulative.size}",
            )
        else:
            self._cumulative = self._cumulative + v
        v.setflags(write=False)
        self.rounds.append(v)

    @property
    def cumulative(self):
        if self._cumulative is None:
            return None
        return self._cumulative.copy()

    def next_weights(self, n_decisions=None):
        """Weights for the next round; uniform before any loss is seen."""
        if self._cumulative is None:
            if n_decisions is None:
                raise LabError(EMPTY_INPUT, "empty history needs an explicit decision count")
            return init_weights(int(n_decisions) - 1)
        return hedge_weights(self._cumulative, self.eta)

    def as_matrix(self):
        if not self.rounds:
            return np.zeros((0, 0))
        return np.vstack(self.rounds)

    def __len__(self):
        return len(self.rounds)


def _weights_matrix(weights_per_round, shape):
    rows = [np.asarray(getattr(w, "weights", w), dtype=np.float64) for w in weights_per_round]
    if not rows:
        raise LabError(EMPTY_INPUT, "no weight vectors supplied")
    mat = np.vstack(rows)
    if mat.shape != shape:
        raise LabError(DIMENSION_MISMATCH, f"weights have shape {mat.shape}, losses {shape}")
    return mat


@dataclass(frozen=True)
class AuditReport:
    lhs: float
    rhs: float
    premise_holds: List[bool]
    inequality_holds: bool
    eta: float
    rounds: int
    eta_in_regime: bool

    @property
    def all_premises_hold(self):
        return all(self.premise_holds)

    def to_dict(self):
        return {
            "lhs": self.lhs,
            "rhs": self.rhs,
            "premise_holds": list(self.premise_holds),
            "inequality_holds": self.inequality_holds,
            "eta": self.eta,
            "rounds": self.rounds,
            "eta_in_regime": self.eta_in_regime,
        }


def audit_no_regret(history, weights_per_round):
    """
    Check max_k min_t L_k^t <= (1/T) sum_t <w^t, L^t> + log(K+1)/(T eta)
    on a normalized loss stream, with per-class premise flags
    mean_t L_k^t >= min_t L_k^t / (1 - eta). Recomputes everything from the
    raw rounds.
    """
    losses = history.as_matrix()
    if losses.size == 0:
        raise LabError(EMPTY_INPUT, "cannot audit an empty loss history")
    if np.any(losses < 0) or np.any(losses > 1):
        raise LabError(OUT_OF_RANGE, "audited losses must be normalized to [0, 1]")
    t_rounds, n = losses.shape
    if n < 2:
        raise LabError(DIMENSION_MISMATCH, "need the average decision plus at least one class")
    weights = _weights_matrix(weights_per_round, losses.shape)
    eta = history.eta

    per_class_min = losses[:, 1:].min(axis=0)
    per_class_mean = losses[:, 1:].mean(axis=0)
    lhs = float(per_class_min.max())
    played = float(np.mean(np.sum(weights * losses, axis=1)))
    slack = math.log(n) / (t_rounds * eta) if eta > 0 else math.inf
    rhs = played + slack

    if eta < 1.0:
        premise = [bool(m >= lo / (1.0 - eta)) for m, lo in zip(per_class_mean, per_class_min)]
    else:
        premise = [False] * (n - 1)

    report = AuditReport(
        lhs=lhs,
        rhs=rhs,
        premise_holds=premise,
        inequality_holds=bool(lhs <= rhs),
        eta=eta,
        rounds=t_rounds,
        eta_in_regime=bool(0 < eta <= MAX_AUDITED_ETA),
    )
    if report.all_premises_hold and not report.inequality_holds:
        LOG.warning("no-regret inequality violated with premises holding: lhs=%.6g rhs=%.6g", lhs, rhs)
    elif not report.eta_in_regime:
        LOG.info("audited eta=%s outside (0, %s]", eta, MAX_AUDITED_ETA)
    return report


@dataclass(frozen=True)
class Lemma1Report:
    decision: int
    lhs: float
    rhs: float
    holds: bool
    eta: float

    def to_dict(self):
        return {"decision": self.decision, "lhs": self.lhs, "rhs": self.rhs, "holds": self.holds, "eta": self.eta}


def audit_lemma1(cost_history, weights_per_round, eta, k):
    """
    Check sum_t <C^t, p^t> >= sum_t C_k^t - eta * sum_t |C_k^t| - log(n)/eta
    for decision k, costs in [-1, 1].
    """
    costs = np.asarray(cost_history, dtype=np.float64)
    if costs.ndim != 2 or costs.size == 0:
        raise LabError(EMPTY_INPUT, "cost history must be a non-empty T x n matrix")
    if not np.all(np.isfinite(costs)):
        raise LabError(NON_FINITE, "cost history must be finite")
    if np.any(costs < -1) or np.any(costs > 1):
        raise LabError(OUT_OF_RANGE, "costs must lie in [-1, 1]")
    eta = _check_eta(eta)
    if eta == 0.0:
        raise LabError(OUT_OF_RANGE, "eta must be > 0 for the lemma audit")
    n = costs.shape[1]
    if not 0 <= int(k) < n:
        raise LabError(OUT_OF_RANGE, f"decision {k} outside [0, {n - 1}]")
    weights = _weights_matrix(weights_per_round, costs.shape)

    col = costs[:, int(k)]
    lhs = float(np.sum(costs * weights))
    rhs = float(col.sum() - eta * np.abs(col).sum() - math.log(n) / eta)
    return Lemma1Report(decision=int(k), lhs=lhs, rhs=rhs, holds=bool(lhs >= rhs), eta=eta)
