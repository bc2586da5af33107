# src/trainer.py
"""
Worst-class adversarial training and its baselines.

Every strategy runs the same loop: per epoch, pick class weights, run
mini-batch SGD (momentum, weight decay) on sum_k w_k L_k with adversarial
examples regenerated per batch, then score the model on the train and
validation splits. Strategies differ only in how the weights are picked:

- wat:     Hedge on the cumulative normalized validation losses
- uniform: (1, 0, ..., 0), the plain average loss
- fixed:   a user-supplied simplex
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Tuple

import numpy as np

from .adversary import AttackConfig, pgd_attack_batch, training_attack, validation_attack
from .error_kinds import (
    EMPTY_INPUT,
    NON_FINITE,
    OUT_OF_RANGE,
    TRAINING_ABORTED,
    LabError,
)
from .hedge import LossHistory, WeightSimplex, audit_no_regret
from .models import (
    LINEAR,
    MLP,
    TRADES,
    LabeledBatch,
    LossSpec,
    ModelParams,
    example_losses,
    init_linear,
    init_mlp,
    loss_and_grad,
)

LOG = logging.getLogger("watlab.trainer")

WAT = "wat"
UNIFORM = "uniform"
FIXED = "fixed"
STRATEGIES = (WAT, UNIFORM, FIXED)

SNAPSHOT_ALL = "per_epoch"
SNAPSHOT_BEST_AND_FINAL = "best_and_final"


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 30
    lr: float = 0.1
    eta: float = 0.1
    beta: float = 6.0
    batch_size: int = 128
    momentum: float = 0.9
    weight_decay: float = 2e-4
    attack: AttackConfig = field(default_factory=training_attack)
    val_attack: AttackConfig = field(default_factory=validation_attack)
    loss_cap: float = 5.0
    seed: int = 0
    strategy: str = WAT
    fixed_weights: Optional[Tuple[float, ...]] = None
    model: str = LINEAR
    hidden: int = 16
    lr_decay_epochs: Tuple[int, ...] = ()
    lr_decay_factor: float = 0.1

    def __post_init__(self):
        checks = [
            (int(self.epochs) >= 1, f"epochs must be >= 1, got {self.epochs}"),
            (self.lr > 0, f"lr must be > 0, got {self.lr}"),
            (self.eta >= 0, f"eta must be >= 0, got {self.eta}"),
            (self.beta >= 0, f"beta must be >= 0, got {self.beta}"),
            (self.loss_cap > 0, f"loss_cap must be > 0, got {self.loss_cap}"),
            (int(self.batch_size) >= 1, f"batch_size must be >= 1, got {self.batch_size}"),
            (0 <= self.momentum < 1, f"momentum must be in [0, 1), got {self.momentum}"),
            (self.weight_decay >= 0, f"weight_decay must be >= 0, got {self.weight_decay}"),
            (self.strategy in STRATEGIES, f"unknown strategy {self.strategy!r}"),
            (self.model in (LINEAR, MLP), f"unknown model {self.model!r}"),
            (int(self.hidden) >= 1, f"hidden must be >= 1, got {self.hidden}"),
            (0 < self.lr_decay_factor <= 1, f"lr_decay_factor must be in (0, 1], got {self.lr_decay_factor}"),
        ]
        for ok, message in checks:
            if not ok:
                raise LabError(OUT_OF_RANGE, message)
        for name in ("lr", "eta", "beta", "loss_cap", "momentum", "weight_decay"):
            if not math.isfinite(getattr(self, name)):
                raise LabError(NON_FINITE, f"{name} must be finite")
        if self.strategy == FIXED:
            if self.fixed_weights is None:
                raise LabError(OUT_OF_RANGE, "fixed strategy needs fixed_weights")
            WeightSimplex(self.fixed_weights)
        if self.fixed_weights is not None:
            object.__setattr__(self, "fixed_weights", tuple(float(v) for v in self.fixed_weights))
        object.__setattr__(self, "lr_decay_epochs", tuple(int(e) for e in self.lr_decay_epochs))

    def lr_at(self, epoch):
        passed = sum(1 for m in self.lr_decay_epochs if epoch > m)
        return self.lr * self.lr_decay_factor**passed

    def to_dict(self):
        return {
            "epochs": self.epochs,
            "lr": self.lr,
            "eta": self.eta,
            "beta": self.beta,
            "batch_size": self.batch_size,
            "momentum": self.momentum,
            "weight_decay": self.weight_decay,
            "attack": self.attack.to_dict(),
            "val_attack": self.val_attack.to_dict(),
            "loss_cap": self.loss_cap,
            "seed": self.seed,
            "strategy": self.strategy,
            "fixed_weights": list(self.fixed_weights) if self.fixed_weights is not None else None,
            "model": self.model,
            "hidden": self.hidden,
            "lr_decay_epochs": list(self.lr_decay_epochs),
            "lr_decay_factor": self.lr_decay_factor,
        }

    @classmethod
    def from_dict(cls, data):
        data = dict(data)
        if "attack" in data:
            data["attack"] = AttackConfig.from_dict(data["attack"])
        if "val_attack" in data:
            data["val_attack"] = AttackConfig.from_dict(data["val_attack"])
        if data.get("fixed_weights") is not None:
            data["fixed_weights"] = tuple(data["fixed_weights"])
        if "lr_decay_epochs" in data:
            data["lr_decay_epochs"] = tuple(data["lr_decay_epochs"])
        return cls(**data)


@dataclass(frozen=True, eq=False)
class ClassLossVector:
    """values[0]: split average; values[c + 1]: average over label c."""

    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64).reshape(-1)
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    def normalized(self, cap):
        return np.minimum(self.values, cap) / cap

    def worst_class(self):
        return int(np.argmax(self.values[1:]))

    def to_list(self):
        return [float(v) for v in self.values]


@dataclass
class TrainRecord:
    config: Dict
    seed: int
    strategy: str
    train_losses: List[ClassLossVector] = field(default_factory=list)
    val_losses: List[ClassLossVector] = field(default_factory=list)
    hedge_inputs: List[np.ndarray] = field(default_factory=list)
    weights: List[WeightSimplex] = field(default_factory=list)
    snapshots: Dict[int, ModelParams] = field(default_factory=dict)
    snapshot_policy: str = SNAPSHOT_ALL
    selected_epoch: Optional[int] = None
    audit: Optional[Dict] = None
    status: str = "ok"
    failure: Optional[str] = None

    @property
    def epochs_run(self):
        return len(self.val_losses)

    def val_matrix(self):
        return np.vstack([v.values for v in self.val_losses])

    @property
    def selected_params(self):
        if self.selected_epoch is None:
            return None
        return self.snapshots.get(self.selected_epoch)

    @property
    def final_params(self):
        if not self.snapshots:
            return None
        return self.snapshots[max(self.snapshots)]

    def to_dict(self):
        return {
            "config": self.config,
            "seed": self.seed,
            "strategy": self.strategy,
            "status": self.status,
            "failure": self.failure,
            "epochs_run": self.epochs_run,
            "selected_epoch": self.selected_epoch,
            "snapshot_policy": self.snapshot_policy,
            "train_losses": [v.to_list() for v in self.train_losses],
            "val_losses": [v.to_list() for v in self.val_losses],
            "hedge_inputs": [[float(x) for x in v] for v in self.hedge_inputs],
            "weights": [w.to_list() for w in self.weights],
            "snapshots": {str(e): p.to_dict() for e, p in sorted(self.snapshots.items())},
            "audit": self.audit,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            config=data["config"],
            seed=data["seed"],
            strategy=data["strategy"],
            train_losses=[ClassLossVector(v) for v in data.get("train_losses", [])],
            val_losses=[ClassLossVector(v) for v in data.get("val_losses", [])],
            hedge_inputs=[np.asarray(v, dtype=np.float64) for v in data.get("hedge_inputs", [])],
            weights=[WeightSimplex(w) for w in data.get("weights", [])],
            snapshots={int(e): ModelParams.from_dict(p) for e, p in data.get("snapshots", {}).items()},
            snapshot_policy=data.get("snapshot_policy", SNAPSHOT_ALL),
            selected_epoch=data.get("selected_epoch"),
            audit=data.get("audit"),
            status=data.get("status", "ok"),
            failure=data.get("failure"),
        )


class TrainingAborted(LabError):
    def __init__(self, message, record):
        super().__init__(TRAINING_ABORTED, message)
        self.record = record


def epoch_class_losses(params, split, attack, beta, rng=None):
    """
    TRADES loss on a split with freshly generated adversarial examples:
    entry 0 is the split average, entry k the average over class k-1.
    """
    if split.n == 0:
        raise LabError(EMPTY_INPUT, "cannot score an empty split")
    split.require_all_classes()
    x_adv = pgd_attack_batch(params, split.inputs, split.labels, attack, rng)
    losses = example_losses(params, LabeledBatch(split.inputs, split.labels, x_adv), LossSpec(TRADES, beta=beta))
    values = [float(np.mean(losses))]
    values.extend(float(np.mean(losses[idx])) for idx in split.class_indices)
    return ClassLossVector(values)


def select_model(val_losses):
    """
    1-based epoch minimizing the worst per-class validation loss
    (column 0, the average, is ignored). Earliest epoch on ties.
    """
    m = np.asarray(val_losses, dtype=np.float64)
    if m.ndim != 2 or m.shape[0] == 0:
        raise LabError(EMPTY_INPUT, "validation loss matrix is empty")
    per_class = m[:, 1:] if m.shape[1] > 1 else m
    return int(np.argmin(per_class.max(axis=1))) + 1


def _init_params(config, n_classes, dim, rng):
    if config.model == LINEAR:
        return init_linear(n_classes, dim)
    return init_mlp(n_classes, dim, config.hidden, rng)


def _abort(record, message):
    record.status = "failed"
    record.failure = message
    LOG.error("training aborted: %s", message)
    raise TrainingAborted(message, record)


def _run(config, train, val, next_weights):
    train.require_all_classes()
    val.require_all_classes()
    if train.n_classes != val.n_classes or train.dim != val.dim:
        raise LabError(OUT_OF_RANGE, "train and validation splits disagree on K or d")

    k = train.n_classes
    rng = np.random.default_rng(config.seed)
    params = _init_params(config, k, train.dim, rng)
    spec = LossSpec(TRADES, beta=config.beta)
    history = LossHistory(config.eta)
    record = TrainRecord(
        config=config.to_dict(),
        seed=config.seed,
        strategy=config.strategy,
        snapshot_policy=SNAPSHOT_ALL if config.model == LINEAR else SNAPSHOT_BEST_AND_FINAL,
    )
    theta = params.to_vector()
    velocity = np.zeros_like(theta)
    decay = config.weight_decay * params.decay_mask()
    best_score, best_epoch = math.inf, 1

    for epoch in range(1, config.epochs + 1):
        weights = next_weights(history, k)
        record.weights.append(weights)
        lr = config.lr_at(epoch)

        order = rng.permutation(train.n)
        for start in range(0, train.n, config.batch_size):
            idx = order[start : start + config.batch_size]
            xb, yb = train.inputs[idx], train.labels[idx]
            x_adv = pgd_attack_batch(params, xb, yb, config.attack, rng, keys=idx)
            try:
                loss, grad = loss_and_grad(params, LabeledBatch(xb, yb, x_adv), spec, weights)
            except LabError as exc:
                if exc.kind == NON_FINITE:
                    _abort(record, f"epoch {epoch}: {exc.args[0]}")
                raise
            # biases are not decayed
            step = grad.to_vector() + decay * theta
            velocity = config.momentum * velocity + step
            theta = theta - lr * velocity
            if not np.all(np.isfinite(theta)):
                _abort(record, f"epoch {epoch}: parameters diverged (batch loss {loss!r})")
            params = params.with_vector(theta)
            LOG.debug("epoch=%d batch=%d loss=%.6f", epoch, start // config.batch_size, loss)

        train_vec = epoch_class_losses(params, train, config.attack, config.beta, rng)
        val_vec = epoch_class_losses(params, val, config.val_attack, config.beta, rng)
        if not (np.all(np.isfinite(train_vec.values)) and np.all(np.isfinite(val_vec.values))):
            _abort(record, f"epoch {epoch}: non-finite epoch losses")
        record.train_losses.append(train_vec)
        record.val_losses.append(val_vec)
        hedge_input = val_vec.normalized(config.loss_cap)
        history.append(hedge_input)
        record.hedge_inputs.append(hedge_input)

        if record.snapshot_policy == SNAPSHOT_ALL:
            record.snapshots[epoch] = params
        else:
            score = float(np.max(val_vec.values[1:]))
            if score < best_score:
                best_score, best_epoch = score, epoch
            record.snapshots[epoch] = params
            record.snapshots = {e: p for e, p in record.snapshots.items() if e in (best_epoch, epoch)}

        LOG.info(
            "%s epoch=%d lr=%.4g weights=%s val_avg=%.4f worst_class=%d val_worst=%.4f",
            config.strategy,
            epoch,
            lr,
            np.round(weights.weights, 4).tolist(),
            val_vec.values[0],
            val_vec.worst_class(),
            float(np.max(val_vec.values[1:])),
        )

    record.selected_epoch = select_model(record.val_matrix())
    if config.strategy == WAT and config.eta > 0:
        record.audit = audit_no_regret(history, record.weights).to_dict()
    return record


def _hedge_schedule(history, k):
    return history.next_weights(k + 1)


def wat_train(config, train, val):
    if config.strategy != WAT:
        raise LabError(OUT_OF_RANGE, f"wat_train needs strategy {WAT!r}, got {config.strategy!r}")
    return _run(config, train, val, _hedge_schedule)


def baseline_train(config, train, val):
    if config.strategy == UNIFORM:
        fixed = None
    elif config.strategy == FIXED:
        fixed = WeightSimplex(config.fixed_weights)
        if fixed.n_decisions != train.n_classes + 1:
            raise LabError(OUT_OF_RANGE, f"fixed weights need {train.n_classes + 1} entries")
    else:
        raise LabError(OUT_OF_RANGE, f"baseline_train needs uniform or fixed, got {config.strategy!r}")

    def schedule(history, k):
        if fixed is not None:
            return fixed
        return WeightSimplex(np.eye(1, k + 1)[0])

    return _run(config, train, val, schedule)


def train(config, train_split, val_split):
    if config.strategy == WAT:
        return wat_train(config, train_split, val_split)
    return baseline_train(config, train_split, val_split)


def with_strategy(config, strategy, **overrides):
    return replace(config, strategy=strategy, **overrides)
