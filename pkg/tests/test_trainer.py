import json
import math

import numpy as np
import pytest

from src import trainer
from src.adversary import CE, KL, AttackConfig, pgd_attack_batch
from src.datagen import Dataset, gaussian_mixture, hard_class_spec, stratified_split
from src.error_kinds import MISSING_CLASS, NON_FINITE, OUT_OF_RANGE, SIMPLEX_VIOLATION, TRAINING_ABORTED, LabError
from src.models import MLP, init_mlp, linear_model, trades_loss
from src.trainer import (
    FIXED,
    SNAPSHOT_BEST_AND_FINAL,
    UNIFORM,
    WAT,
    ClassLossVector,
    TrainConfig,
    TrainingAborted,
    TrainRecord,
    baseline_train,
    epoch_class_losses,
    select_model,
    train,
    wat_train,
    with_strategy,
)


def _splits(per_class=40, val=10, seed=0):
    return stratified_split(gaussian_mixture(hard_class_spec(per_class=per_class, seed=seed)), val)


def _config(**overrides):
    base = dict(
        epochs=3,
        lr=0.5,
        eta=0.1,
        batch_size=32,
        loss_cap=2.0,
        attack=AttackConfig(name="train", epsilon=8 / 255, steps=3, step_size=0.01, inner_loss=KL),
        val_attack=AttackConfig(name="validation", epsilon=8 / 255, steps=5, step_size=0.006, inner_loss=KL),
    )
    base.update(overrides)
    return TrainConfig(**base)


def _dump(record, drop=("config", "strategy", "audit")):
    data = record.to_dict()
    for key in drop:
        data.pop(key, None)
    return json.dumps(data, sort_keys=True)


def test_train_config_validation():
    with pytest.raises(LabError) as e:
        TrainConfig(epochs=0)
    assert e.value.kind == OUT_OF_RANGE
    with pytest.raises(LabError):
        TrainConfig(eta=-0.1)
    with pytest.raises(LabError):
        TrainConfig(loss_cap=0.0)
    with pytest.raises(LabError):
        TrainConfig(strategy=FIXED)
    with pytest.raises(LabError) as e:
        TrainConfig(strategy=FIXED, fixed_weights=(0.5, 0.6))
    assert e.value.kind == SIMPLEX_VIOLATION


def test_train_config_round_trip_and_lr_schedule():
    cfg = _config(lr_decay_epochs=(2, 4), lr_decay_factor=0.5)
    assert TrainConfig.from_dict(cfg.to_dict()) == cfg
    assert [cfg.lr_at(e) for e in (1, 2, 3, 4, 5)] == [0.5, 0.5, 0.25, 0.25, 0.125]


def test_class_loss_vector_normalization():
    v = ClassLossVector([1.0, 0.5, 3.0])
    assert v.normalized(2.0).tolist() == [0.5, 0.25, 1.0]
    assert v.worst_class() == 1


def test_select_model_examples():
    assert select_model([[0.3, 0.2, 0.4]]) == 1
    assert select_model([[0.7, 0.5, 0.9], [0.65, 0.6, 0.7]]) == 2
    assert select_model([[0.1, 0.4, 0.4], [0.1, 0.4, 0.4]]) == 1
    with pytest.raises(LabError):
        select_model(np.zeros((0, 3)))


def test_epoch_class_losses_single_class():
    data = Dataset(np.random.default_rng(0).uniform(size=(5, 2)), [0] * 5, 1)
    params = linear_model(np.array([[1.0, 0.0], [0.0, 1.0]]))
    v = epoch_class_losses(params, data, AttackConfig(epsilon=0.02, inner_loss=CE), 6.0)
    assert v.values[0] == pytest.approx(v.values[1], abs=1e-12)


def test_epoch_class_losses_match_per_example_summation():
    rng = np.random.default_rng(1)
    train_split, _ = _splits()
    params = init_mlp(3, 2, 5, rng)
    attack = AttackConfig(epsilon=0.03, steps=4, step_size=0.01, inner_loss=CE)
    v = epoch_class_losses(params, train_split, attack, 6.0)
    X_adv = pgd_attack_batch(params, train_split.inputs, train_split.labels, attack)
    per_example = [
        trades_loss(params, train_split.inputs[i], X_adv[i], int(train_split.labels[i]), 6.0)
        for i in range(train_split.n)
    ]
    assert v.values[0] == pytest.approx(math.fsum(per_example) / train_split.n, abs=1e-10)
    for c in range(3):
        members = [per_example[i] for i in range(train_split.n) if train_split.labels[i] == c]
        assert v.values[c + 1] == pytest.approx(math.fsum(members) / len(members), abs=1e-10)
    assert v.values[0] == pytest.approx(np.mean(v.values[1:]), abs=1e-9)


def test_epoch_class_losses_names_missing_class():
    data = Dataset(np.zeros((2, 2)), [0, 0], 2)
    with pytest.raises(LabError) as e:
        epoch_class_losses(linear_model(np.eye(2)), data, AttackConfig(inner_loss=CE), 1.0)
    assert e.value.kind == MISSING_CLASS
    assert "class 1" in str(e.value)


def test_wat_record_invariants():
    train_split, val_split = _splits()
    record = wat_train(_config(), train_split, val_split)
    assert record.status == "ok"
    assert record.weights[0].to_list() == [0.25] * 4
    for w in record.weights:
        assert np.all(w.weights >= 0)
        assert abs(math.fsum(w.weights) - 1.0) <= 1e-12
    for h in record.hedge_inputs:
        assert np.all((h >= 0) & (h <= 1))
    assert 1 <= record.selected_epoch <= 3
    assert sorted(record.snapshots) == [1, 2, 3]
    assert record.audit is not None
    if all(record.audit["premise_holds"]):
        assert record.audit["inequality_holds"]


def test_training_is_deterministic():
    train_split, val_split = _splits()
    a = wat_train(_config(), train_split, val_split)
    b = wat_train(_config(), train_split, val_split)
    assert json.dumps(a.to_dict(), sort_keys=True) == json.dumps(b.to_dict(), sort_keys=True)


def test_eta_zero_wat_is_bit_identical_to_fixed_uniform_weights():
    train_split, val_split = _splits()
    wat = wat_train(_config(eta=0.0), train_split, val_split)
    fixed = baseline_train(_config(strategy=FIXED, fixed_weights=(0.25,) * 4), train_split, val_split)
    assert all(w.to_list() == [0.25] * 4 for w in wat.weights)
    assert wat.audit is None
    assert _dump(wat) == _dump(fixed)


def test_fixed_average_weight_is_bit_identical_to_uniform():
    train_split, val_split = _splits()
    uniform = baseline_train(_config(strategy=UNIFORM), train_split, val_split)
    fixed = baseline_train(_config(strategy=FIXED, fixed_weights=(1.0, 0.0, 0.0, 0.0)), train_split, val_split)
    assert _dump(uniform) == _dump(fixed)


def test_uniform_and_eta_zero_optimize_the_same_objective_on_balanced_batches():
    train_split, val_split = _splits()
    still = AttackConfig(name="none", epsilon=0.0, steps=1, step_size=0.01, inner_loss=KL)
    common = dict(batch_size=train_split.n, attack=still, val_attack=still)
    uniform = baseline_train(_config(strategy=UNIFORM, **common), train_split, val_split)
    wat = wat_train(_config(eta=0.0, **common), train_split, val_split)
    for a, b in zip(uniform.val_losses, wat.val_losses):
        assert a.values == pytest.approx(b.values, abs=1e-9)
    for a, b in zip(uniform.train_losses, wat.train_losses):
        assert a.values == pytest.approx(b.values, abs=1e-9)


def test_fixed_weights_must_match_class_count():
    train_split, val_split = _splits()
    with pytest.raises(LabError) as e:
        baseline_train(_config(strategy=FIXED, fixed_weights=(0.5, 0.5)), train_split, val_split)
    assert e.value.kind == OUT_OF_RANGE


def test_wrong_entry_point_is_rejected():
    train_split, val_split = _splits()
    with pytest.raises(LabError):
        wat_train(_config(strategy=UNIFORM), train_split, val_split)
    with pytest.raises(LabError):
        baseline_train(_config(), train_split, val_split)


def test_non_finite_loss_aborts_with_partial_record(monkeypatch):
    train_split, val_split = _splits()
    calls = {"n": 0}
    real = trainer.loss_and_grad

    def flaky(*args, **kwargs):
        calls["n"] += 1
        if calls["n"] > 3:
            raise LabError(NON_FINITE, "weighted loss is not finite")
        return real(*args, **kwargs)

    monkeypatch.setattr(trainer, "loss_and_grad", flaky)
    with pytest.raises(TrainingAborted) as e:
        train(_config(epochs=5, batch_size=train_split.n), train_split, val_split)
    assert e.value.kind == TRAINING_ABORTED
    record = e.value.record
    assert record.status == "failed"
    assert "epoch 4" in record.failure
    assert record.epochs_run == 3
    assert len(record.weights) == 4


def test_mlp_keeps_best_and_final_snapshots():
    train_split, val_split = _splits()
    record = wat_train(_config(model=MLP, hidden=4, epochs=4), train_split, val_split)
    assert record.snapshot_policy == SNAPSHOT_BEST_AND_FINAL
    assert 4 in record.snapshots
    assert record.selected_epoch in record.snapshots
    assert len(record.snapshots) <= 2
    assert record.selected_params is not None


def test_train_record_round_trip():
    train_split, val_split = _splits()
    record = wat_train(_config(epochs=2), train_split, val_split)
    back = TrainRecord.from_dict(json.loads(json.dumps(record.to_dict())))
    assert back.to_dict() == record.to_dict()
    assert np.array_equal(back.final_params.to_vector(), record.final_params.to_vector())


def test_with_strategy_overrides():
    cfg = with_strategy(_config(), FIXED, fixed_weights=(0.4, 0.2, 0.2, 0.2))
    assert cfg.strategy == FIXED
    assert cfg.fixed_weights == (0.4, 0.2, 0.2, 0.2)
    assert with_strategy(cfg, WAT).strategy == WAT


def test_weight_decay_leaves_mlp_biases_alone(monkeypatch):
    train_split, val_split = _splits()
    start = init_mlp(3, 2, 4, np.random.default_rng(5))
    start = start.with_vector(start.to_vector() + 0.5)

    def zero_grad(params, batch, spec, weights):
        return 0.0, params.with_vector(np.zeros(params.size))

    monkeypatch.setattr(trainer, "_init_params", lambda config, k, dim, rng: start)
    monkeypatch.setattr(trainer, "loss_and_grad", zero_grad)
    record = train(_config(model=MLP, hidden=4, epochs=1, weight_decay=0.1, momentum=0.0), train_split, val_split)
    final = record.final_params
    assert np.array_equal(final.b1, start.b1)
    assert np.array_equal(final.b2, start.b2)
    assert np.all(np.abs(final.w1) < np.abs(start.w1))
    assert np.all(np.abs(final.w2) < np.abs(start.w2))
