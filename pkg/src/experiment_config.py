"""
Loader for experiment configuration files (JSON, default config/experiment.json).

Sections: name, seeds, data, model, train, attack, methods, baseline,
bounds, sweep. Missing keys fall back to _default; anything malformed
raises LabError(config_invalid).
"""

import copy
import json
import logging
import math
import os
from dataclasses import dataclass, replace
from typing import Optional, Tuple

from .adversary import DEFAULT_EPSILON, AttackConfig
from .bounds import BoundConfig
from .error_kinds import CONFIG_INVALID, LabError
from .trainer import FIXED, STRATEGIES, WAT, TrainConfig

LOG = logging.getLogger("watlab.config")

DEFAULT_CONFIG_PATH = os.path.normpath(os.path.join(os.path.dirname(__file__), "..", "config", "experiment.json"))

DATA_KINDS = ("hard_class", "mixture", "csv")

_default = {
    "name": "experiment",
    "seeds": [0],
    "data": {
        "kind": "hard_class",
        "train_per_class": 400,
        "val_per_class": 100,
        "test_per_class": 300,
        "test_seed_offset": 10000,
        "means": None,
        "stds": None,
        "train_path": None,
        "test_path": None,
    },
    "model": {"kind": "linear", "hidden": 16},
    "train": {
        "epochs": 100,
        "lr": 0.1,
        "eta": 0.1,
        "beta": 6.0,
        "batch_size": 128,
        "momentum": 0.9,
        "weight_decay": 2e-4,
        "loss_cap": 5.0,
        "lr_decay_epochs": [],
        "lr_decay_factor": 0.1,
    },
    "attack": {
        "epsilon": DEFAULT_EPSILON,
        "clip_domain": [0.0, 1.0],
        "train": {"steps": 10, "step_size": 0.007, "inner_loss": "kl"},
        "validation": {"steps": 100, "step_size": 0.003, "inner_loss": "kl"},
        "evaluation": [
            {"name": "pgd", "steps": 100, "step_size": 0.003, "inner_loss": "ce"},
            {"name": "cw", "steps": 100, "step_size": 0.003, "inner_loss": "cw"},
        ],
    },
    "methods": [
        {"name": "uniform", "strategy": "uniform"},
        {"name": "wat", "strategy": "wat"},
    ],
    "baseline": "uniform",
    "bounds": {"delta": 0.1, "gamma": 1.0, "w_norm": 100.0, "q": 1.0, "mc_draws": 10000},
    "sweep": {"etas": [0.01, 0.05, 0.1, 0.5]},
}


@dataclass(frozen=True)
class MethodSpec:
    name: str
    strategy: str
    weights: Optional[Tuple[float, ...]] = None
    eta: Optional[float] = None

    def to_dict(self):
        return {
            "name": self.name,
            "strategy": self.strategy,
            "weights": list(self.weights) if self.weights is not None else None,
            "eta": self.eta,
        }


@dataclass(frozen=True)
class ExperimentConfig:
    name: str
    seeds: Tuple[int, ...]
    data: dict
    train: TrainConfig
    eval_attacks: Tuple[AttackConfig, ...]
    methods: Tuple[MethodSpec, ...]
    baseline: str
    bounds: BoundConfig
    sweep_etas: Tuple[float, ...]
    source: str = ""

    def method(self, name):
        for m in self.methods:
            if m.name == name:
                return m
        raise LabError(CONFIG_INVALID, f"unknown method {name!r}")

    def train_config(self, method, seed):
        """TrainConfig for one method and seed."""
        overrides = {"seed": int(seed), "strategy": method.strategy}
        if method.strategy == FIXED:
            overrides["fixed_weights"] = method.weights
        if method.eta is not None:
            overrides["eta"] = method.eta
        return replace(self.train, **overrides)

    def with_methods(self, methods):
        return replace(self, methods=tuple(methods))

    def to_dict(self):
        return {
            "name": self.name,
            "seeds": list(self.seeds),
            "data": dict(self.data),
            "train": self.train.to_dict(),
            "eval_attacks": [a.to_dict() for a in self.eval_attacks],
            "methods": [m.to_dict() for m in self.methods],
            "baseline": self.baseline,
            "bounds": self.bounds.to_dict(),
            "sweep_etas": list(self.sweep_etas),
        }


def _merge(base, override):
    out = copy.deepcopy(base)
    for key, value in override.items():
        if isinstance(value, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], value)
        else:
            out[key] = copy.deepcopy(value)
    return out


def _attack(section, common, name):
    merged = {"epsilon": common["epsilon"], "clip_domain": common["clip_domain"], "name": name}
    merged.update(section)
    return AttackConfig.from_dict(merged)


def _method(entry):
    if not isinstance(entry, dict) or "name" not in entry or "strategy" not in entry:
        raise LabError(CONFIG_INVALID, f"method entries need name and strategy, got {entry!r}")
    strategy = entry["strategy"]
    if strategy not in STRATEGIES:
        raise LabError(CONFIG_INVALID, f"method {entry['name']!r}: unknown strategy {strategy!r}")
    weights = entry.get("weights")
    if strategy == FIXED and weights is None:
        raise LabError(CONFIG_INVALID, f"method {entry['name']!r}: fixed strategy needs weights")
    eta = entry.get("eta")
    return MethodSpec(
        name=str(entry["name"]),
        strategy=strategy,
        weights=tuple(float(w) for w in weights) if weights is not None else None,
        eta=float(eta) if eta is not None else None,
    )


def parse_experiment_config(data, source=""):
    if not isinstance(data, dict):
        raise LabError(CONFIG_INVALID, "config root must be a JSON object")
    cfg = _merge(_default, data)
    try:
        seeds = tuple(int(s) for s in cfg["seeds"])
        if not seeds:
            raise LabError(CONFIG_INVALID, "seeds must not be empty")
        data_section = cfg["data"]
        if data_section.get("kind") not in DATA_KINDS:
            raise LabError(CONFIG_INVALID, f"data.kind must be one of {DATA_KINDS}")
        if data_section["kind"] == "csv" and not (data_section.get("train_path") and data_section.get("test_path")):
            raise LabError(CONFIG_INVALID, "csv data needs train_path and test_path")
        if data_section["kind"] == "mixture" and not (data_section.get("means") and data_section.get("stds")):
            raise LabError(CONFIG_INVALID, "mixture data needs means and stds")

        attack = cfg["attack"]
        train_section = dict(cfg["train"])
        train_section["model"] = cfg["model"]["kind"]
        train_section["hidden"] = cfg["model"].get("hidden", 16)
        train_section["attack"] = _attack(attack["train"], attack, "train")
        train_section["val_attack"] = _attack(attack["validation"], attack, "validation")
        train_section["strategy"] = WAT
        template = TrainConfig(**{k: (tuple(v) if isinstance(v, list) else v) for k, v in train_section.items()})

        evals = tuple(_attack(a, attack, a.get("name", f"attack{i}")) for i, a in enumerate(attack["evaluation"]))
        names = [a.name for a in evals]
        if len(set(names)) != len(names):
            raise LabError(CONFIG_INVALID, f"evaluation attack names must be unique, got {names}")

        methods = tuple(_method(m) for m in cfg["methods"])
        method_names = [m.name for m in methods]
        if not methods or len(set(method_names)) != len(method_names):
            raise LabError(CONFIG_INVALID, f"method names must be unique and non-empty, got {method_names}")
        baseline = cfg["baseline"]
        if baseline not in method_names:
            raise LabError(CONFIG_INVALID, f"baseline {baseline!r} is not one of the methods")

        bounds_section = dict(cfg["bounds"])
        bounds_section.setdefault("epsilon", attack["epsilon"])
        bounds = BoundConfig.from_dict(bounds_section)

        etas = tuple(float(e) for e in cfg["sweep"]["etas"])
        if not etas or any(not math.isfinite(e) or e < 0 for e in etas):
            raise LabError(CONFIG_INVALID, f"sweep etas must be a non-empty list of values >= 0, got {etas}")
    except LabError as exc:
        if exc.kind == CONFIG_INVALID:
            raise
        raise LabError(CONFIG_INVALID, f"{source or 'config'}: {exc.args[0]}") from exc
    except (KeyError, TypeError, ValueError) as exc:
        raise LabError(CONFIG_INVALID, f"{source or 'config'}: {exc}") from exc

    return ExperimentConfig(
        name=str(cfg["name"]),
        seeds=seeds,
        data=data_section,
        train=template,
        eval_attacks=evals,
        methods=methods,
        baseline=baseline,
        bounds=bounds,
        sweep_etas=etas,
        source=source,
    )


def load_experiment_config(path=DEFAULT_CONFIG_PATH):
    if not os.path.exists(path):
        raise LabError(CONFIG_INVALID, f"config file not found: {path}")
    try:
        with open(path, "r", encoding="utf-8") as f:
            data = json.load(f)
    except json.JSONDecodeError as exc:
        raise LabError(CONFIG_INVALID, f"{path}: invalid JSON ({exc})") from exc
    cfg = parse_experiment_config(data, source=str(path))
    LOG.info("loaded config %s (%d seeds, methods=%s)", path, len(cfg.seeds), [m.name for m in cfg.methods])
    return cfg
