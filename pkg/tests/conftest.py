import json

import pytest


def tiny_experiment(**overrides):
    """A config small enough to run end to end in a few seconds."""
    data = {
        "name": "tiny",
        "seeds": [0],
        "data": {"kind": "hard_class", "train_per_class": 20, "val_per_class": 10, "test_per_class": 20},
        "train": {"epochs": 2, "lr": 0.5, "eta": 0.1, "batch_size": 32, "loss_cap": 2.0},
        "attack": {
            "train": {"steps": 2, "step_size": 0.01, "inner_loss": "kl"},
            "validation": {"steps": 3, "step_size": 0.01, "inner_loss": "kl"},
            "evaluation": [
                {"name": "pgd", "steps": 5, "step_size": 0.01, "inner_loss": "ce"},
                {"name": "exact", "method": "closed_form", "inner_loss": "cw"},
            ],
        },
        "methods": [
            {"name": "uniform", "strategy": "uniform"},
            {"name": "wat", "strategy": "wat"},
        ],
        "baseline": "uniform",
        "bounds": {"w_norm": 100.0, "mc_draws": 50},
        "sweep": {"etas": [0.01, 0.5]},
    }
    data.update(overrides)
    return data


@pytest.fixture
def make_config(tmp_path):
    def write(name="tiny.json", **overrides):
        path = tmp_path / name
        path.write_text(json.dumps(tiny_experiment(**overrides)), encoding="utf-8")
        return str(path)

    return write


@pytest.fixture
def tiny_config(make_config):
    return make_config()
