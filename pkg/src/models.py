# src/models.py
"""
Multi-class models and the losses used to train them adversarially.

Two model kinds are supported:
- linear: scores = W x, W is K x d (row k scores class k)
- mlp:    scores = W2 relu(W1 x + b1) + b2

Everything runs in float64 and every exponential goes through a
log-sum-exp shift. Gradients are exact and analytic; batched helpers
return per-row score gradients that are then pushed back through the
model, either to the parameters or to the inputs (the attack needs the
latter).
"""

import logging
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .error_kinds import (
    DIMENSION_MISMATCH,
    EMPTY_INPUT,
    LABEL_OUT_OF_RANGE,
    NON_FINITE,
    OUT_OF_RANGE,
    UNSUPPORTED_MODEL,
    LabError,
)
from .hedge import as_simplex

LOG = logging.getLogger("watlab.models")

LINEAR = "linear"
MLP = "mlp"
MODEL_KINDS = (LINEAR, MLP)

CROSS_ENTROPY = "cross_entropy"
KL = "kl"
TRADES = "trades"
RAMP_MARGIN = "ramp_margin"
LOSS_KINDS = (CROSS_ENTROPY, KL, TRADES, RAMP_MARGIN)


def _finite_array(value, name, ndim):
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise LabError(DIMENSION_MISMATCH, f"{name} must be {ndim}-D, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise LabError(NON_FINITE, f"{name} has non-finite entries")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ModelParams:
    """
    Parameters of a linear or one-hidden-layer ReLU model.
    Also used as the container for gradients of the same shape.
    """

    kind: str
    linear: Optional[np.ndarray] = None
    w1: Optional[np.ndarray] = None
    b1: Optional[np.ndarray] = None
    w2: Optional[np.ndarray] = None
    b2: Optional[np.ndarray] = None

    def __post_init__(self):
        if self.kind == LINEAR:
            if self.linear is None:
                raise LabError(EMPTY_INPUT, "linear model needs a weight matrix")
            object.__setattr__(self, "linear", _finite_array(self.linear, "W", 2))
        elif self.kind == MLP:
            for name in ("w1", "b1", "w2", "b2"):
                if getattr(self, name) is None:
                    raise LabError(EMPTY_INPUT, f"mlp model needs {name}")
            object.__setattr__(self, "w1", _finite_array(self.w1, "w1", 2))
            object.__setattr__(self, "b1", _finite_array(self.b1, "b1", 1))
            object.__setattr__(self, "w2", _finite_array(self.w2, "w2", 2))
            object.__setattr__(self, "b2", _finite_array(self.b2, "b2", 1))
            h, _ = self.w1.shape
            if self.b1.shape != (h,) or self.w2.shape[1] != h or self.b2.shape != (self.w2.shape[0],):
                raise LabError(DIMENSION_MISMATCH, "mlp layer shapes are inconsistent")
            if h < 1:
                raise LabError(OUT_OF_RANGE, "mlp hidden width must be >= 1")
        else:
            raise LabError(UNSUPPORTED_MODEL, f"unknown model kind {self.kind!r}")
        if self.n_classes < 2:
            raise LabError(OUT_OF_RANGE, f"need K >= 2 classes, got {self.n_classes}")
        if self.dim < 1:
            raise LabError(OUT_OF_RANGE, "input dimension must be >= 1")

    @property
    def n_classes(self):
        return int(self.linear.shape[0] if self.kind == LINEAR else self.w2.shape[0])

    @property
    def dim(self):
        return int(self.linear.shape[1] if self.kind == LINEAR else self.w1.shape[1])

    @property
    def hidden(self):
        return 0 if self.kind == LINEAR else int(self.w1.shape[0])

    def arrays(self):
        if self.kind == LINEAR:
            return [self.linear]
        return [self.w1, self.b1, self.w2, self.b2]

    def to_vector(self):
        return np.concatenate([a.reshape(-1) for a in self.arrays()])

    def decay_mask(self):
        """1 for weight-matrix entries, 0 for biases, laid out like to_vector()."""
        if self.kind == LINEAR:
            return np.ones(self.linear.size)
        return np.concatenate(
            [np.ones(self.w1.size), np.zeros(self.b1.size), np.ones(self.w2.size), np.zeros(self.b2.size)]
        )

    def with_vector(self, vec):
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size != self.size:
            raise LabError(DIMENSION_MISMATCH, f"vector has {vec.size} entries, model has {self.size}")
        parts, offset = [], 0
        for a in self.arrays():
            parts.append(vec[offset : offset + a.size].reshape(a.shape))
            offset += a.size
        if self.kind == LINEAR:
            return ModelParams(LINEAR, linear=parts[0])
        return ModelParams(MLP, w1=parts[0], b1=parts[1], w2=parts[2], b2=parts[3])

    @property
    def size(self):
        return int(sum(a.size for a in self.arrays()))

    def to_dict(self):
        if self.kind == LINEAR:
            return {"kind": LINEAR, "W": self.linear.tolist()}
        return {
            "kind": MLP,
            "w1": self.w1.tolist(),
            "b1": self.b1.tolist(),
            "w2": self.w2.tolist(),
            "b2": self.b2.tolist(),
        }

    @classmethod
    def from_dict(cls, data):
        kind = data.get("kind")
        if kind == LINEAR:
            return cls(LINEAR, linear=data["W"])
        if kind == MLP:
            return cls(MLP, w1=data["w1"], b1=data["b1"], w2=data["w2"], b2=data["b2"])
        raise LabError(UNSUPPORTED_MODEL, f"unknown model kind {kind!r}")


def linear_model(W):
    return ModelParams(LINEAR, linear=W)


def init_linear(n_classes, dim):
    return ModelParams(LINEAR, linear=np.zeros((int(n_classes), int(dim))))


def init_mlp(n_classes, dim, hidden, rng, scale=None):
    """He-style init for layer 1, small init for layer 2, zero biases."""
    scale1 = math.sqrt(2.0 / dim) if scale is None else scale
    scale2 = math.sqrt(1.0 / hidden) if scale is None else scale
    return ModelParams(
        MLP,
        w1=rng.normal(0.0, scale1, size=(hidden, dim)),
        b1=np.zeros(hidden),
        w2=rng.normal(0.0, scale2, size=(n_classes, hidden)),
        b2=np.zeros(n_classes),
    )


@dataclass(frozen=True)
class LossSpec:
    kind: str = TRADES
    beta: float = 6.0
    gamma: float = 1.0

    def __post_init__(self):
        if self.kind not in LOSS_KINDS:
            raise LabError(OUT_OF_RANGE, f"unknown loss kind {self.kind!r}")
        if not (math.isfinite(self.beta) and self.beta >= 0):
            raise LabError(OUT_OF_RANGE, f"beta must be >= 0, got {self.beta}")
        if not (math.isfinite(self.gamma) and self.gamma > 0):
            raise LabError(OUT_OF_RANGE, f"gamma must be > 0, got {self.gamma}")


@dataclass(frozen=True, eq=False)
class LabeledBatch:
    inputs: np.ndarray
    labels: np.ndarray
    adv_inputs: Optional[np.ndarray] = None

    def __post_init__(self):
        x = _finite_array(self.inputs, "inputs", 2)
        y = np.asarray(self.labels)
        if y.ndim != 1 or y.shape[0] != x.shape[0]:
            raise LabError(DIMENSION_MISMATCH, f"labels shape {y.shape} does not match inputs {x.shape}")
        if y.size and not np.issubdtype(y.dtype, np.integer):
            raise LabError(LABEL_OUT_OF_RANGE, "labels must be integers")
        y = y.astype(np.int64)
        y.setflags(write=False)
        object.__setattr__(self, "inputs", x)
        object.__setattr__(self, "labels", y)
        if self.adv_inputs is not None:
            xa = _finite_array(self.adv_inputs, "adversarial inputs", 2)
            if xa.shape != x.shape:
                raise LabError(DIMENSION_MISMATCH, "adversarial inputs must match clean inputs")
            object.__setattr__(self, "adv_inputs", xa)

    def __len__(self):
        return int(self.labels.shape[0])


# -- score-level functions ---------------------------------------------------


def _check_scores(scores, name="scores"):
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim == 0 or s.shape[-1] == 0:
        raise LabError(EMPTY_INPUT, f"{name} are empty")
    if not np.all(np.isfinite(s)):
        raise LabError(NON_FINITE, f"{name} must be finite")
    return s


def _check_label(y, k):
    if isinstance(y, (bool, np.bool_)) or not isinstance(y, (int, np.integer)):
        raise LabError(LABEL_OUT_OF_RANGE, f"label must be an integer, got {y!r}")
    if not 0 <= int(y) < k:
        raise LabError(LABEL_OUT_OF_RANGE, f"label {y} outside [0, {k - 1}]")
    return int(y)


def _check_labels(labels, k):
    y = np.asarray(labels)
    if y.size and (y.min() < 0 or y.max() >= k):
        raise LabError(LABEL_OUT_OF_RANGE, f"labels must lie in [0, {k - 1}]")
    return y.astype(np.int64)


def log_softmax(scores):
    s = _check_scores(scores)
    z = s - s.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def softmax(scores):
    return np.exp(log_softmax(scores))


def cross_entropy(scores, y):
    s = _check_scores(scores)
    y = _check_label(y, s.shape[-1])
    return float(-log_softmax(s)[y])


def kl_divergence(scores_p, scores_q):
    """KL(softmax(p) || softmax(q)), clamped at 0 against round-off."""
    lp = log_softmax(_check_scores(scores_p, "scores_p"))
    lq = log_softmax(_check_scores(scores_q, "scores_q"))
    if lp.shape != lq.shape:
        raise LabError(DIMENSION_MISMATCH, f"score shapes differ: {lp.shape} vs {lq.shape}")
    return max(0.0, float(np.sum(np.exp(lp) * (lp - lq))))


def margin(scores, y):
    s = _check_scores(scores)
    if s.shape[-1] < 2:
        raise LabError(OUT_OF_RANGE, "margin needs at least two classes")
    y = _check_label(y, s.shape[-1])
    return float(s[y] - np.max(np.delete(s, y)))


def ramp_loss(t, gamma):
    gamma = float(gamma)
    if not gamma > 0:
        raise LabError(OUT_OF_RANGE, f"gamma must be > 0, got {gamma}")
    out = np.clip(1.0 - np.asarray(t, dtype=np.float64) / gamma, 0.0, 1.0)
    if out.ndim == 0:
        return float(out)
    return out


def predict(params, x):
    """Argmax of the scores; numpy argmax returns the lowest index on ties."""
    return np.argmax(forward(params, x), axis=-1)


# -- model evaluation --------------------------------------------------------


def _as_rows(params, x):
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim not in (1, 2) or arr.shape[-1] != params.dim:
        raise LabError(
            DIMENSION_MISMATCH, f"input shape {arr.shape} does not match model dimension {params.dim}"
        )
    if not np.all(np.isfinite(arr)):
        raise LabError(NON_FINITE, "inputs must be finite")
    return arr


def forward_cache(params, X):
    """Scores for a batch plus the hidden pre-activations (None for linear)."""
    if params.kind == LINEAR:
        return X @ params.linear.T, None
    pre = X @ params.w1.T + params.b1
    return np.maximum(pre, 0.0) @ params.w2.T + params.b2, pre


def forward(params, x):
    arr = _as_rows(params, x)
    if arr.ndim == 1:
        return forward_cache(params, arr[None, :])[0][0]
    return forward_cache(params, arr)[0]


def param_grad(params, X, pre, G):
    """Sum over rows of d(scores_i . G_i)/d(params)."""
    if params.kind == LINEAR:
        return ModelParams(LINEAR, linear=G.T @ X)
    hidden = np.maximum(pre, 0.0)
    back = (G @ params.w2) * (pre > 0)
    return ModelParams(
        MLP,
        w1=back.T @ X,
        b1=back.sum(axis=0),
        w2=G.T @ hidden,
        b2=G.sum(axis=0),
    )


def input_grad(params, X, pre, G):
    """Row-wise d(scores_i . G_i)/d(x_i)."""
    if params.kind == LINEAR:
        return G @ params.linear
    return ((G @ params.w2) * (pre > 0)) @ params.w1


def _onehot(labels, k):
    out = np.zeros((labels.shape[0], k))
    out[np.arange(labels.shape[0]), labels] = 1.0
    return out


def _log_softmax_rows(S):
    z = S - S.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def _runner_up(S, labels):
    masked = S.copy()
    masked[np.arange(S.shape[0]), labels] = -np.inf
    return np.argmax(masked, axis=1)


def _loss_terms(params, batch, spec):
    """
    Per-example losses plus the score gradients on the clean and adversarial
    branches. Returns (losses, g_clean, g_adv, cache_clean, cache_adv, X_adv).
    """
    X, Y = batch.inputs, batch.labels
    k = params.n_classes
    Y = _check_labels(Y, k)
    X_adv = batch.adv_inputs if batch.adv_inputs is not None else X
    rows = np.arange(Y.shape[0])

    S, pre = forward_cache(params, X)
    S_adv, pre_adv = forward_cache(params, X_adv)
    zeros = np.zeros_like(S)

    if spec.kind == CROSS_ENTROPY:
        lq = _log_softmax_rows(S_adv)
        losses = -lq[rows, Y]
        return losses, zeros, np.exp(lq) - _onehot(Y, k), (S, pre), (S_adv, pre_adv), X_adv

    if spec.kind == RAMP_MARGIN:
        runner = _runner_up(S_adv, Y)
        t = S_adv[rows, Y] - S_adv[rows, runner]
        losses = ramp_loss(t, spec.gamma)
        slope = np.where((t > 0) & (t < spec.gamma), -1.0 / spec.gamma, 0.0)
        g = np.zeros_like(S)
        g[rows, Y] = slope
        g[rows, runner] -= slope
        return losses, zeros, g, (S, pre), (S_adv, pre_adv), X_adv

    lp = _log_softmax_rows(S)
    lq = _log_softmax_rows(S_adv)
    p = np.exp(lp)
    q = np.exp(lq)
    a = lp - lq
    kl = np.sum(p * a, axis=1)
    g_kl_clean = p * (a - kl[:, None])
    g_kl_adv = q - p

    if spec.kind == KL:
        return kl, g_kl_clean, g_kl_adv, (S, pre), (S_adv, pre_adv), X_adv

    beta = spec.beta
    losses = -lp[rows, Y] + beta * kl
    g_clean = p - _onehot(Y, k) + beta * g_kl_clean
    return losses, g_clean, beta * g_kl_adv, (S, pre), (S_adv, pre_adv), X_adv


def example_losses(params, batch, spec):
    """Per-example loss values for a batch."""
    return _loss_terms(params, batch, spec)[0]


def trades_loss(params, x, x_adv, y, beta):
    xa = _as_rows(params, x)
    xb = _as_rows(params, x_adv)
    if xa.ndim != 1 or xb.shape != xa.shape:
        raise LabError(DIMENSION_MISMATCH, "x and x_adv must be d-vectors of the same size")
    y = _check_label(y, params.n_classes)
    s = forward(params, xa)
    return cross_entropy(s, y) + float(beta) * kl_divergence(s, forward(params, xb))


def class_coefficients(labels, weights, n_classes):
    """
    c_i such that sum_i c_i l_i = w_0 mean(l) + sum_k w_k mean_{i in class k}(l_i).
    Absent classes contribute nothing.
    """
    labels = np.asarray(labels, dtype=np.int64)
    n = labels.shape[0]
    counts = np.bincount(labels, minlength=n_classes).astype(np.float64)
    per_class = np.divide(weights[1:], counts, out=np.zeros(n_classes), where=counts > 0)
    return weights[0] / n + per_class[labels]


def loss_and_grad(params, batch, spec, class_weights):
    """
    Class-weighted loss sum_k w_k L_k(batch) (L_0 = batch average) and its
    exact gradient with respect to the parameters.
    """
    if len(batch) == 0:
        raise LabError(EMPTY_INPUT, "batch is empty")
    w = as_simplex(class_weights).weights
    k = params.n_classes
    if w.size != k + 1:
        raise LabError(DIMENSION_MISMATCH, f"need {k + 1} weights, got {w.size}")
    if batch.inputs.shape[1] != params.dim:
        raise LabError(DIMENSION_MISMATCH, "batch dimension does not match the model")

    losses, g_clean, g_adv, (_, pre), (_, pre_adv), X_adv = _loss_terms(params, batch, spec)
    coeff = class_coefficients(batch.labels, w, k)
    loss = float(coeff @ losses)
    if not math.isfinite(loss):
        raise LabError(NON_FINITE, "weighted loss is not finite")

    grad_vec = param_grad(params, batch.inputs, pre, coeff[:, None] * g_clean).to_vector()
    grad_vec = grad_vec + param_grad(params, X_adv, pre_adv, coeff[:, None] * g_adv).to_vector()
    return loss, params.with_vector(grad_vec)
