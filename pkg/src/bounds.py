# src/bounds.py
"""
Generalization-bound calculators for worst-class robust risk.

- mc_rademacher / exact_rademacher: empirical Rademacher complexity of a
  finite function class given its evaluations on a sample
- theorem2_rhs / theorem2_report: the per-class Rademacher bound, with the
  complexity term taken over a finite dictionary of models
- theorem3_terms: the E_mean, U and c terms of the linear-classifier bound
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import List

import numpy as np

from .adversary import linear_worst_case_margins, robust_error_indicators
from .error_kinds import (
    DIMENSION_MISMATCH,
    EMPTY_INPUT,
    NON_FINITE,
    OUT_OF_RANGE,
    UNBALANCED_CLASSES,
    LabError,
)
from .models import ramp_loss

LOG = logging.getLogger("watlab.bounds")

EXACT_LIMIT = 20
MC_CHUNK = 2048
DICTIONARY_LABEL = "dictionary lower bound of the complexity term"


def _conjugate(q):
    if q == math.inf:
        return 1.0
    if q == 1:
        return math.inf
    return q / (q - 1.0)


@dataclass(frozen=True)
class BoundConfig:
    delta: float = 0.1
    loss_bound: float = 1.0
    gamma: float = 1.0
    w_norm: float = 1.0
    p: float = math.inf
    q: float = 1.0
    epsilon: float = 8.0 / 255.0
    mc_draws: int = 10000
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise LabError(OUT_OF_RANGE, f"delta must be in (0, 1), got {self.delta}")
        for name in ("loss_bound", "gamma", "w_norm"):
            value = getattr(self, name)
            if not (math.isfinite(value) and value > 0):
                raise LabError(OUT_OF_RANGE, f"{name} must be > 0, got {value}")
        if self.p < 1 or self.q < 1:
            raise LabError(OUT_OF_RANGE, "p and q must be >= 1")
        inv_p = 0.0 if self.p == math.inf else 1.0 / self.p
        inv_q = 0.0 if self.q == math.inf else 1.0 / self.q
        if abs(inv_p + inv_q - 1.0) > 1e-12:
            raise LabError(OUT_OF_RANGE, f"1/p + 1/q must equal 1, got p={self.p} q={self.q}")
        if self.epsilon < 0:
            raise LabError(OUT_OF_RANGE, "epsilon must be >= 0")
        if int(self.mc_draws) < 2:
            raise LabError(OUT_OF_RANGE, "mc_draws must be >= 2 for a standard error")

    @classmethod
    def with_q(cls, q, **kwargs):
        return cls(p=_conjugate(q), q=q, **kwargs)

    def to_dict(self):
        d = asdict(self)
        # JSON has no infinity
        d["p"] = "inf" if self.p == math.inf else self.p
        d["q"] = "inf" if self.q == math.inf else self.q
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        for key in ("p", "q"):
            if key in data:
                data[key] = float(data[key])
        if "q" in data and "p" not in data:
            data["p"] = _conjugate(data["q"])
        if "p" in data and "q" not in data:
            data["q"] = _conjugate(data["p"])
        return cls(**data)


@dataclass(frozen=True)
class RademacherEstimate:
    mean: float
    stderr: float
    draws: int

    def to_dict(self):
        data = asdict(self)
        # a single draw has no spread; NaN is not valid JSON
        if math.isnan(data["stderr"]):
            data["stderr"] = None
        return data


def _evaluation_matrix(evaluations):
    h = np.asarray(evaluations, dtype=np.float64)
    if h.ndim == 1:
        h = h[None, :]
    if h.ndim != 2 or h.shape[0] == 0 or h.shape[1] == 0:
        raise LabError(EMPTY_INPUT, "need at least one function evaluated on at least one point")
    if not np.all(np.isfinite(h)):
        raise LabError(NON_FINITE, "function evaluations must be finite")
    return h


def _sign_draws(rng, draws, n):
    return rng.choice(np.array([-1.0, 1.0]), size=(draws, n))


def _mean_and_stderr(samples):
    draws = samples.size
    stderr = float(samples.std(ddof=1) / math.sqrt(draws)) if draws > 1 else math.nan
    return RademacherEstimate(float(samples.mean()), stderr, int(draws))


def mc_rademacher(evaluations, draws, rng, chunk=MC_CHUNK):
    """
    Monte-Carlo estimate of E_sigma max_f (1/n) sum_i sigma_i f(z_i), one row
    of `evaluations` per function. Draws are processed in chunks in a fixed
    order so the result depends only on the generator state.
    """
    h = _evaluation_matrix(evaluations)
    if int(draws) < 1:
        raise LabError(OUT_OF_RANGE, "draws must be >= 1")
    n = h.shape[1]
    samples, remaining = [], int(draws)
    while remaining > 0:
        b = min(chunk, remaining)
        sigma = _sign_draws(rng, b, n)
        samples.append((sigma @ h.T).max(axis=1) / n)
        remaining -= b
    return _mean_and_stderr(np.concatenate(samples))


def _all_signs(n):
    codes = np.arange(2**n)[:, None] >> np.arange(n)[None, :]
    return 1.0 - 2.0 * (codes & 1)


def exact_rademacher(evaluations):
    h = _evaluation_matrix(evaluations)
    n = h.shape[1]
    if n > EXACT_LIMIT:
        raise LabError(OUT_OF_RANGE, f"exact enumeration limited to n <= {EXACT_LIMIT}, got {n}")
    return float(((_all_signs(n) @ h.T).max(axis=1) / n).mean())


def _rows(vectors):
    v = np.asarray(vectors, dtype=np.float64)
    if v.ndim != 2:
        raise LabError(DIMENSION_MISMATCH, f"vectors must be m x d, got shape {v.shape}")
    return v


def mc_norm_expectation(vectors, q, draws, rng, chunk=MC_CHUNK):
    """MC estimate of E_sigma || sum_i sigma_i v_i ||_q."""
    v = _rows(vectors)
    if v.shape[0] == 0:
        return RademacherEstimate(0.0, 0.0, int(draws))
    samples, remaining = [], int(draws)
    while remaining > 0:
        b = min(chunk, remaining)
        sigma = _sign_draws(rng, b, v.shape[0])
        samples.append(np.linalg.norm(sigma @ v, ord=q, axis=1))
        remaining -= b
    return _mean_and_stderr(np.concatenate(samples))


def exact_norm_expectation(vectors, q):
    v = _rows(vectors)
    if v.shape[0] == 0:
        return 0.0
    if v.shape[0] > EXACT_LIMIT:
        raise LabError(OUT_OF_RANGE, f"exact enumeration limited to {EXACT_LIMIT} vectors")
    return float(np.linalg.norm(_all_signs(v.shape[0]) @ v, ord=q, axis=1).mean())


def theorem2_slack(loss_bound, n_classes, n_total, delta):
    if not 0 < delta < 1:
        raise LabError(OUT_OF_RANGE, f"delta must be in (0, 1), got {delta}")
    if loss_bound <= 0 or n_classes < 1 or n_total < 1:
        raise LabError(OUT_OF_RANGE, "loss bound, class count and sample size must be positive")
    return 3.0 * loss_bound * math.sqrt(n_classes * math.log(2.0 / delta) / (2.0 * n_total))


def theorem2_rhs(empirical_wc_risk, rad_per_class_max, loss_bound, n_classes, n_total, delta):
    values = (empirical_wc_risk, rad_per_class_max, loss_bound)
    if not all(math.isfinite(v) for v in values):
        raise LabError(NON_FINITE, "bound inputs must be finite")
    slack = theorem2_slack(loss_bound, n_classes, n_total, delta)
    return empirical_wc_risk + 2.0 * loss_bound * rad_per_class_max + slack


def robust_ramp_losses(W, data, gamma, epsilon):
    """Ramp loss of the exact worst-case margin, one value per example."""
    _, worst = linear_worst_case_margins(W, data.inputs, data.labels, epsilon)
    return ramp_loss(worst, gamma)


def worst_class_risk(losses, data):
    return float(max(np.mean(losses[idx]) for idx in data.class_indices))


@dataclass
class Theorem2Report:
    empirical_wc_risk: List[float]
    rad_per_class: List[RademacherEstimate]
    rad_per_class_max: float
    slack: float
    rhs: List[float]
    label: str = DICTIONARY_LABEL

    def to_dict(self):
        return {
            "empirical_wc_risk": list(self.empirical_wc_risk),
            "rad_per_class": [r.to_dict() for r in self.rad_per_class],
            "rad_per_class_max": self.rad_per_class_max,
            "slack": self.slack,
            "rhs": list(self.rhs),
            "label": self.label,
        }


def theorem2_report(dictionary, data, cfg, rng=None):
    """
    Evaluate the bound for every member of a finite dictionary of linear
    models, using the robust ramp loss in [0, 1]. The complexity term is
    estimated over the dictionary only.
    """
    if not dictionary:
        raise LabError(EMPTY_INPUT, "the function dictionary is empty")
    data.require_all_classes()
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)
    losses = np.vstack([robust_ramp_losses(W, data, cfg.gamma, cfg.epsilon) for W in dictionary])

    rad = [mc_rademacher(losses[:, idx], cfg.mc_draws, rng) for idx in data.class_indices]
    rad_max = max(r.mean for r in rad)
    emp = [worst_class_risk(row, data) for row in losses]
    slack = theorem2_slack(cfg.loss_bound, data.n_classes, data.n, cfg.delta)
    rhs = [theorem2_rhs(e, rad_max, cfg.loss_bound, data.n_classes, data.n, cfg.delta) for e in emp]
    return Theorem2Report(emp, rad, rad_max, slack, rhs)


def theorem3_c(w_norm, n_classes, epsilon, dim, q, gamma, n_total, delta):
    d_term = 1.0 if q == math.inf else dim ** (1.0 / q)
    attack = 2.0 * w_norm * n_classes**2 * epsilon * d_term / (gamma * math.sqrt(n_total))
    return attack + 3.0 * math.sqrt(n_classes * math.log(2.0 / delta) / (2.0 * n_total))


@dataclass
class Theorem3Terms:
    e_mean: float
    u: float
    u_stderr: float
    c: float
    rhs: float
    w_norm_observed: float
    norm_cap_exceeded: bool

    def to_dict(self):
        return {
            "e_mean": self.e_mean,
            "u": self.u,
            "u_stderr": self.u_stderr,
            "c": self.c,
            "rhs": self.rhs,
            "w_norm_observed": self.w_norm_observed,
            "norm_cap_exceeded": self.norm_cap_exceeded,
        }


def theorem3_terms(W, data, cfg, rng=None, exact=False):
    """
    E_mean = (K/|S|) sum_i E_i, U = max_{y,k} E || sum_{i in S_k} sigma_i x_i 1(y_i = y) ||_q,
    c as in the bound, rhs = E_mean + 2 W K^3 U / (gamma |S|) + c.
    `exact=True` enumerates signs instead of sampling (small classes only).
    """
    W = np.asarray(getattr(W, "linear", W), dtype=np.float64)
    data.require_all_classes()
    counts = data.class_counts()
    k, n = data.n_classes, data.n
    if any(c * k != n for c in counts):
        raise LabError(UNBALANCED_CLASSES, f"bound needs balanced classes, got counts {counts}")
    if W.shape != (k, data.dim):
        raise LabError(DIMENSION_MISMATCH, f"W has shape {W.shape}, data needs {(k, data.dim)}")
    rng = rng if rng is not None else np.random.default_rng(cfg.seed)

    e = robust_error_indicators(W, data.inputs, data.labels, cfg.gamma, cfg.epsilon)
    e_mean = k / n * float(e.sum())

    u, u_se = 0.0, 0.0
    for y in range(k):
        for cls in range(k):
            idx = data.class_indices[cls]
            vectors = data.inputs[idx] * (data.labels[idx] == y)[:, None]
            if exact:
                value, se = exact_norm_expectation(vectors, cfg.q), 0.0
            else:
                est = mc_norm_expectation(vectors, cfg.q, cfg.mc_draws, rng)
                value, se = est.mean, est.stderr
            if value > u:
                u, u_se = value, se

    c = theorem3_c(cfg.w_norm, k, cfg.epsilon, data.dim, cfg.q, cfg.gamma, n, cfg.delta)
    rhs = e_mean + 2.0 * cfg.w_norm * k**3 / (cfg.gamma * n) * u + c

    observed = float(np.max(np.linalg.norm(W, ord=cfg.p, axis=1)))
    exceeded = observed > cfg.w_norm
    if exceeded:
        LOG.warning("max_k ||w_k||_p = %.4g exceeds the norm cap %.4g; the bound does not apply", observed, cfg.w_norm)
    return Theorem3Terms(e_mean, u, u_se, c, rhs, observed, exceeded)
