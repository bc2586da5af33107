# src/adversary.py
"""
Inner maximization under the l-infinity ball.

- pgd_attack / pgd_attack_batch: signed-gradient ascent with projection
- linear_worst_case_margin(s): exact closed form for linear models
- robust_error_indicator(s): margin-based robust error used by the bounds
"""

import logging
import math
from dataclasses import asdict, dataclass
from typing import Optional, Tuple

import numpy as np

from .error_kinds import (
    DIMENSION_MISMATCH,
    LABEL_OUT_OF_RANGE,
    NON_FINITE,
    OUT_OF_RANGE,
    UNSUPPORTED_MODEL,
    LabError,
)
from .models import LINEAR, _log_softmax_rows, _onehot, _runner_up, forward_cache, input_grad

LOG = logging.getLogger("watlab.adversary")

CE = "ce"
KL = "kl"
CW_MARGIN = "cw"
INNER_LOSSES = (CE, KL, CW_MARGIN)

PGD = "pgd"
CLOSED_FORM = "closed_form"
METHODS = (PGD, CLOSED_FORM)

DEFAULT_EPSILON = 8.0 / 255.0

# Scale of the gaussian start used for the KL inner loss (zero gradient at x).
KL_START_NOISE = 0.001


@dataclass(frozen=True)
class AttackConfig:
    name: str = "attack"
    epsilon: float = DEFAULT_EPSILON
    steps: int = 10
    step_size: float = 0.007
    inner_loss: str = KL
    clip_domain: Optional[Tuple[float, float]] = (0.0, 1.0)
    restarts: int = 0
    method: str = PGD

    def __post_init__(self):
        if not (math.isfinite(self.epsilon) and self.epsilon >= 0):
            raise LabError(OUT_OF_RANGE, f"epsilon must be >= 0, got {self.epsilon}")
        if int(self.steps) < 1:
            raise LabError(OUT_OF_RANGE, f"steps must be >= 1, got {self.steps}")
        if not (math.isfinite(self.step_size) and self.step_size > 0):
            raise LabError(OUT_OF_RANGE, f"step_size must be > 0, got {self.step_size}")
        if self.inner_loss not in INNER_LOSSES:
            raise LabError(OUT_OF_RANGE, f"unknown inner loss {self.inner_loss!r}")
        if int(self.restarts) < 0:
            raise LabError(OUT_OF_RANGE, f"restarts must be >= 0, got {self.restarts}")
        if self.method not in METHODS:
            raise LabError(OUT_OF_RANGE, f"unknown attack method {self.method!r}")
        if self.clip_domain is not None:
            lo, hi = (float(v) for v in self.clip_domain)
            if lo > hi:
                raise LabError(OUT_OF_RANGE, f"domain box has lo {lo} > hi {hi}")
            object.__setattr__(self, "clip_domain", (lo, hi))
        object.__setattr__(self, "steps", int(self.steps))
        object.__setattr__(self, "restarts", int(self.restarts))

    def to_dict(self):
        d = asdict(self)
        d["clip_domain"] = list(self.clip_domain) if self.clip_domain is not None else None
        return d

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if data.get("clip_domain") is not None:
            data["clip_domain"] = tuple(data["clip_domain"])
        return cls(**data)


def training_attack(epsilon=DEFAULT_EPSILON):
    return AttackConfig(name="train", epsilon=epsilon, steps=10, step_size=0.007, inner_loss=KL)


def validation_attack(epsilon=DEFAULT_EPSILON):
    return AttackConfig(name="validation", epsilon=epsilon, steps=100, step_size=0.003, inner_loss=KL)


def evaluation_attack(epsilon=DEFAULT_EPSILON):
    return AttackConfig(name="pgd", epsilon=epsilon, steps=100, step_size=0.003, inner_loss=CE)


def cw_attack(epsilon=DEFAULT_EPSILON):
    return AttackConfig(name="cw", epsilon=epsilon, steps=100, step_size=0.003, inner_loss=CW_MARGIN)


def exact_attack(epsilon=DEFAULT_EPSILON):
    return AttackConfig(name="exact", epsilon=epsilon, inner_loss=CW_MARGIN, clip_domain=None, method=CLOSED_FORM)


def project_linf(x, center, epsilon, clip=None):
    if epsilon < 0:
        raise LabError(OUT_OF_RANGE, f"epsilon must be >= 0, got {epsilon}")
    out = np.clip(np.asarray(x, dtype=np.float64), center - epsilon, center + epsilon)
    if clip is not None:
        lo, hi = clip
        if lo > hi:
            raise LabError(OUT_OF_RANGE, f"domain box has lo {lo} > hi {hi}")
        out = np.clip(out, lo, hi)
    return out


def inner_loss_and_grad(params, X, X_cur, Y, inner_loss):
    """Row-wise inner loss at X_cur and its gradient with respect to X_cur."""
    S, pre = forward_cache(params, X_cur)
    rows = np.arange(Y.shape[0])
    k = params.n_classes
    if inner_loss == CE:
        lq = _log_softmax_rows(S)
        G = np.exp(lq) - _onehot(Y, k)
        values = -lq[rows, Y]
    elif inner_loss == KL:
        S0, _ = forward_cache(params, X)
        lp = _log_softmax_rows(S0)
        lq = _log_softmax_rows(S)
        p = np.exp(lp)
        values = np.sum(p * (lp - lq), axis=1)
        G = np.exp(lq) - p
    else:
        runner = _runner_up(S, Y)
        values = S[rows, runner] - S[rows, Y]
        G = np.zeros_like(S)
        G[rows, runner] = 1.0
        G[rows, Y] -= 1.0
    return values, input_grad(params, X_cur, pre, G)


def _check_attack_inputs(params, X, Y):
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != params.dim:
        raise LabError(DIMENSION_MISMATCH, f"inputs {X.shape} do not match model dimension {params.dim}")
    if Y.shape != (X.shape[0],):
        raise LabError(DIMENSION_MISMATCH, "labels do not match inputs")
    if Y.size and (Y.min() < 0 or Y.max() >= params.n_classes):
        raise LabError(LABEL_OUT_OF_RANGE, f"labels must lie in [0, {params.n_classes - 1}]")
    return X, Y


def _start_noise(base, keys, run, dim, draw):
    """One noise row per example, each from its own substream."""
    if keys.size == 0:
        return np.zeros((0, dim))
    return np.vstack([draw(np.random.default_rng([base, int(k), run]), dim) for k in keys])


def pgd_attack_batch(params, X, Y, cfg, rng=None, keys=None):
    """
    Attack every row of X. Restart 0 starts at x (x plus tiny gaussian noise
    for the KL inner loss); restarts >= 1 start uniformly in the ball. The
    clean point and each final iterate compete; the largest inner loss wins,
    earliest candidate on ties.

    Start noise for row i comes from a substream keyed by keys[i] (the row's
    index in its dataset; defaults to the row number) and one base seed drawn
    from `rng`, so an example is attacked the same way in any batch.
    """
    X, Y = _check_attack_inputs(params, X, Y)
    if cfg.method == CLOSED_FORM:
        return linear_worst_case_inputs(params, X, Y, cfg.epsilon)
    keys = np.arange(X.shape[0]) if keys is None else np.asarray(keys, dtype=np.int64)
    if keys.shape != (X.shape[0],) or (keys.size and keys.min() < 0):
        raise LabError(DIMENSION_MISMATCH, "keys must be one non-negative integer per row")
    if rng is None:
        rng = np.random.default_rng(0)
    eps, clip = cfg.epsilon, cfg.clip_domain
    dim = X.shape[1]
    base = int(rng.integers(0, 2**63 - 1)) if (cfg.restarts or cfg.inner_loss == KL) else 0

    best_x = X.copy()
    best_val, _ = inner_loss_and_grad(params, X, X, Y, cfg.inner_loss)
    for run in range(1 + cfg.restarts):
        if run > 0:
            start = X + _start_noise(base, keys, run, dim, lambda g, d: g.uniform(-eps, eps, size=d))
        elif cfg.inner_loss == KL:
            start = X + _start_noise(base, keys, run, dim, lambda g, d: KL_START_NOISE * g.standard_normal(d))
        else:
            start = X
        cur = project_linf(start, X, eps, clip)
        for _ in range(cfg.steps):
            _, g = inner_loss_and_grad(params, X, cur, Y, cfg.inner_loss)
            if not np.all(np.isfinite(g)):
                raise LabError(NON_FINITE, "attack gradient is not finite")
            cur = project_linf(cur + cfg.step_size * np.sign(g), X, eps, clip)
        values, _ = inner_loss_and_grad(params, X, cur, Y, cfg.inner_loss)
        better = values > best_val
        best_x[better] = cur[better]
        best_val = np.where(better, values, best_val)
    return best_x


def pgd_attack(params, x, y, cfg, rng=None):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 1:
        raise LabError(DIMENSION_MISMATCH, "pgd_attack takes a single d-vector; use pgd_attack_batch")
    return pgd_attack_batch(params, x[None, :], np.array([y]), cfg, rng)[0]


def _require_linear(W):
    kind = getattr(W, "kind", None)
    if kind is not None:
        if kind != LINEAR:
            raise LabError(UNSUPPORTED_MODEL, "closed-form analysis needs a linear model")
        W = W.linear
    W = np.asarray(W, dtype=np.float64)
    if W.ndim != 2 or W.shape[0] < 2:
        raise LabError(DIMENSION_MISMATCH, f"W must be K x d with K >= 2, got {W.shape}")
    return W


def _pairwise_l1(W):
    return np.abs(W[:, None, :] - W[None, :, :]).sum(axis=2)


def linear_worst_case_margins(W, X, Y, epsilon):
    """
    Batched exact adversarial margins. Entry (i, y') is
    <w_y - w_y', x_i> - eps ||w_y' - w_y||_1 (+inf at y' = y_i);
    the second result is the row minimum.
    """
    W = _require_linear(W)
    X = np.asarray(X, dtype=np.float64)
    Y = np.asarray(Y, dtype=np.int64)
    if X.ndim != 2 or X.shape[1] != W.shape[1] or Y.shape != (X.shape[0],):
        raise LabError(DIMENSION_MISMATCH, "inputs do not match W")
    if Y.size and (Y.min() < 0 or Y.max() >= W.shape[0]):
        raise LabError(LABEL_OUT_OF_RANGE, f"labels must lie in [0, {W.shape[0] - 1}]")
    rows = np.arange(Y.shape[0])
    S = X @ W.T
    margins = S[rows, Y][:, None] - S - epsilon * _pairwise_l1(W)[Y]
    margins[rows, Y] = np.inf
    return margins, margins.min(axis=1)


def linear_worst_case_margin(W, x, y, epsilon):
    W = _require_linear(W)
    if not isinstance(y, (int, np.integer)) or not 0 <= int(y) < W.shape[0]:
        raise LabError(LABEL_OUT_OF_RANGE, f"label {y} outside [0, {W.shape[0] - 1}]")
    margins, worst = linear_worst_case_margins(W, np.asarray(x, dtype=np.float64)[None, :], [int(y)], epsilon)
    return margins[0], float(worst[0])


def linear_worst_case_inputs(W, X, Y, epsilon):
    """The maximizing corner x - eps sign(w_y - w_y*) against the worst competitor y*."""
    W = _require_linear(W)
    margins, _ = linear_worst_case_margins(W, X, Y, epsilon)
    worst_class = np.argmin(margins, axis=1)
    direction = np.sign(W[np.asarray(Y, dtype=np.int64)] - W[worst_class])
    return np.asarray(X, dtype=np.float64) - epsilon * direction


def robust_error_indicators(W, X, Y, gamma, epsilon):
    _, worst = linear_worst_case_margins(W, X, Y, epsilon)
    return (worst <= gamma).astype(np.int64)


def robust_error_indicator(W, x, y, gamma, epsilon):
    _, worst = linear_worst_case_margin(W, x, y, epsilon)
    return int(worst <= gamma)
