import math

import numpy as np
import pytest

from src.error_kinds import DIMENSION_MISMATCH, EMPTY_INPUT, LABEL_OUT_OF_RANGE, NON_FINITE, OUT_OF_RANGE, LabError
from src.hedge import WeightSimplex
from src.models import (
    CROSS_ENTROPY,
    KL,
    LINEAR,
    MLP,
    RAMP_MARGIN,
    TRADES,
    LabeledBatch,
    LossSpec,
    ModelParams,
    class_coefficients,
    cross_entropy,
    example_losses,
    forward,
    init_mlp,
    kl_divergence,
    linear_model,
    loss_and_grad,
    margin,
    predict,
    ramp_loss,
    softmax,
    trades_loss,
)


def test_softmax_examples():
    assert softmax([0.0, 0.0, 0.0]) == pytest.approx([1 / 3] * 3, abs=1e-15)
    assert softmax([2.0, 2.0 + math.log(2)]) == pytest.approx([1 / 3, 2 / 3], abs=1e-12)
    s = np.array([0.3, -1.2, 4.0])
    assert softmax(s) == pytest.approx(softmax(s + 100.0), abs=1e-12)


def test_softmax_rejects_non_finite():
    with pytest.raises(LabError) as e:
        softmax([0.0, float("inf")])
    assert e.value.kind == NON_FINITE


def test_softmax_is_a_probability_vector_for_extreme_scores():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = softmax(rng.normal(0, 300, size=int(rng.integers(2, 10))))
        assert np.all(p >= 0)
        assert abs(math.fsum(p) - 1.0) <= 1e-12


def test_cross_entropy_examples():
    assert cross_entropy([0.0] * 4, 2) == pytest.approx(math.log(4))
    assert cross_entropy([1.0, 2.0], 0) == pytest.approx(math.log(1 + math.e) - 1, abs=1e-12)
    assert cross_entropy([1e4, 0.0, 0.0], 0) == pytest.approx(0.0, abs=1e-12)


def test_cross_entropy_rejects_bad_label():
    with pytest.raises(LabError) as e:
        cross_entropy([0.0, 1.0], 2)
    assert e.value.kind == LABEL_OUT_OF_RANGE


def test_kl_divergence_examples():
    p = np.array([0.5, -1.0, 2.0])
    assert kl_divergence(p, p) == 0.0
    assert kl_divergence(p, p + 3.0) == pytest.approx(0.0, abs=1e-12)
    expected = 0.5 * math.log(2) - 0.5 * math.log(1.5)
    assert kl_divergence([0.0, 0.0], [0.0, math.log(3)]) == pytest.approx(expected, abs=1e-12)


def test_kl_divergence_nonnegative_on_random_scores():
    rng = np.random.default_rng(1)
    for _ in range(200):
        assert kl_divergence(rng.normal(size=5), rng.normal(size=5)) >= 0.0


def test_margin_examples():
    assert margin([2.0, 5.0, 1.0], 1) == 3.0
    assert margin([1.0, 1.0, 1.0], 2) == 0.0
    assert margin([0.0, 4.0, 2.5], 1) == 1.5


def test_positive_margin_implies_prediction():
    rng = np.random.default_rng(2)
    W = rng.normal(size=(4, 3))
    params = linear_model(W)
    for x in rng.normal(size=(200, 3)):
        s = forward(params, x)
        for y in range(4):
            if margin(s, y) > 0:
                assert int(predict(params, x)) == y


def test_ramp_loss_branches():
    assert ramp_loss(-0.5, 1.0) == 1.0
    assert ramp_loss(0.5, 1.0) == 0.5
    assert ramp_loss(2.0, 1.0) == 0.0
    t = np.linspace(-3, 3, 101)
    r = ramp_loss(t, 0.7)
    assert np.all((r >= 0) & (r <= 1))
    assert np.all(np.diff(r) <= 0)
    with pytest.raises(LabError):
        ramp_loss(0.1, 0.0)


def test_zero_one_error_below_ramp_surrogate():
    for t in np.linspace(-2, 2, 81):
        assert float(t <= 0) <= ramp_loss(t, 0.5)


def test_forward_linear_examples():
    W = np.array([[1.0, 2.0, 0.0], [3.0, 4.0, 0.0]])
    assert forward(linear_model(W), [1.0, 0.0, 0.0]) == pytest.approx(W[:, 0])
    assert np.all(forward(linear_model(np.zeros((3, 2))), [0.4, 0.9]) == 0.0)
    with pytest.raises(LabError) as e:
        forward(linear_model(W), [1.0, 2.0])
    assert e.value.kind == DIMENSION_MISMATCH


def test_forward_mlp_matches_straight_line_evaluation():
    rng = np.random.default_rng(3)
    params = init_mlp(3, 4, 6, rng)
    x = rng.uniform(size=4)
    hidden = [max(0.0, sum(params.w1[j, i] * x[i] for i in range(4)) + params.b1[j]) for j in range(6)]
    expected = [sum(params.w2[k, j] * hidden[j] for j in range(6)) + params.b2[k] for k in range(3)]
    assert forward(params, x) == pytest.approx(expected, abs=1e-12)


def test_predict_breaks_ties_toward_lowest_index():
    params = linear_model(np.zeros((3, 2)))
    assert predict(params, np.array([[0.2, 0.3]])).tolist() == [0]


def test_model_params_round_trip_and_validation():
    rng = np.random.default_rng(4)
    params = init_mlp(3, 2, 5, rng)
    back = ModelParams.from_dict(params.to_dict())
    assert np.array_equal(back.to_vector(), params.to_vector())
    with pytest.raises(LabError) as e:
        ModelParams(LINEAR, linear=np.zeros((1, 2)))
    assert e.value.kind == OUT_OF_RANGE
    with pytest.raises(LabError) as e:
        ModelParams(LINEAR, linear=[[0.0, float("nan")], [0.0, 0.0]])
    assert e.value.kind == NON_FINITE


def test_trades_loss_examples():
    rng = np.random.default_rng(5)
    params = linear_model(rng.normal(size=(3, 4)))
    x, x_adv = rng.uniform(size=4), rng.uniform(size=4)
    ce = cross_entropy(forward(params, x), 1)
    assert trades_loss(params, x, x, 1, 6.0) == pytest.approx(ce, abs=1e-12)
    assert trades_loss(params, x, x_adv, 1, 0.0) == pytest.approx(ce, abs=1e-12)
    expected = ce + 6.0 * kl_divergence(forward(params, x), forward(params, x_adv))
    assert trades_loss(params, x, x_adv, 1, 6.0) == pytest.approx(expected, abs=1e-12)


def test_trades_loss_rejects_mismatched_inputs():
    params = linear_model(np.eye(2))
    with pytest.raises(LabError) as e:
        trades_loss(params, [0.1, 0.2], [0.1, 0.2, 0.3], 0, 1.0)
    assert e.value.kind == DIMENSION_MISMATCH


def test_example_losses_match_scalar_recomputation():
    rng = np.random.default_rng(6)
    params = init_mlp(3, 4, 5, rng)
    X = rng.uniform(size=(7, 4))
    Xa = np.clip(X + rng.uniform(-0.03, 0.03, size=X.shape), 0, 1)
    Y = rng.integers(0, 3, size=7)
    losses = example_losses(params, LabeledBatch(X, Y, Xa), LossSpec(TRADES, beta=2.5))
    for i in range(7):
        assert losses[i] == pytest.approx(trades_loss(params, X[i], Xa[i], int(Y[i]), 2.5), abs=1e-12)


def test_class_coefficients_reproduce_weighted_class_losses():
    rng = np.random.default_rng(7)
    labels = np.array([0, 0, 1, 2, 2, 2])
    losses = rng.uniform(size=6)
    w = np.array([0.1, 0.2, 0.3, 0.4])
    coeff = class_coefficients(labels, w, 3)
    expected = 0.1 * losses.mean() + sum(w[c + 1] * losses[labels == c].mean() for c in range(3))
    assert coeff @ losses == pytest.approx(expected, abs=1e-14)


def test_uniform_weighting_is_the_plain_average():
    rng = np.random.default_rng(8)
    params = linear_model(rng.normal(size=(3, 2)))
    X = rng.uniform(size=(9, 2))
    Y = np.array([0, 1, 2] * 3)
    batch = LabeledBatch(X, Y, np.clip(X + 0.02, 0, 1))
    loss, _ = loss_and_grad(params, batch, LossSpec(), WeightSimplex([1.0, 0.0, 0.0, 0.0]))
    assert loss == pytest.approx(float(example_losses(params, batch, LossSpec()).mean()), abs=1e-12)


def test_zero_weight_absent_class_does_not_change_gradient():
    rng = np.random.default_rng(9)
    params = linear_model(rng.normal(size=(3, 2)))
    X = rng.uniform(size=(6, 2))
    Y = np.array([0, 1, 1, 0, 2, 2])
    w = WeightSimplex([0.0, 0.6, 0.4, 0.0])
    full = LabeledBatch(X, Y)
    kept = Y != 2
    reduced = LabeledBatch(X[kept], Y[kept])
    _, g_full = loss_and_grad(params, full, LossSpec(), w)
    _, g_reduced = loss_and_grad(params, reduced, LossSpec(), w)
    assert g_full.to_vector() == pytest.approx(g_reduced.to_vector(), abs=1e-12)


def test_loss_and_grad_errors():
    params = linear_model(np.eye(2))
    empty = LabeledBatch(np.zeros((0, 2)), np.zeros(0, dtype=np.int64))
    with pytest.raises(LabError) as e:
        loss_and_grad(params, empty, LossSpec(), WeightSimplex([1.0, 0.0, 0.0]))
    assert e.value.kind == EMPTY_INPUT
    batch = LabeledBatch(np.ones((2, 2)), np.array([0, 1]))
    with pytest.raises(LabError) as e:
        loss_and_grad(params, batch, LossSpec(), WeightSimplex([0.5, 0.5]))
    assert e.value.kind == DIMENSION_MISMATCH


def _max_rel_error(params, batch, spec, weights, step=1e-5):
    _, grad = loss_and_grad(params, batch, spec, weights)
    analytic = grad.to_vector()
    theta = params.to_vector()
    worst = 0.0
    for j in range(theta.size):
        up, down = theta.copy(), theta.copy()
        up[j] += step
        down[j] -= step
        f_up, _ = loss_and_grad(params.with_vector(up), batch, spec, weights)
        f_down, _ = loss_and_grad(params.with_vector(down), batch, spec, weights)
        numeric = (f_up - f_down) / (2 * step)
        a = analytic[j]
        worst = max(worst, abs(a - numeric) / max(abs(a), abs(numeric), 1e-3))
    return worst


def _near_kink(params, *inputs):
    for X in inputs:
        pre = X @ params.w1.T + params.b1
        if np.any(np.abs(pre) < 1e-3):
            return True
    return False


def _random_instance(rng, kind):
    k = int(rng.integers(2, 5))
    d = int(rng.integers(1, 5))
    n = int(rng.integers(1, 9))
    while True:
        if kind == LINEAR:
            params = linear_model(rng.normal(size=(k, d)))
        else:
            params = init_mlp(k, d, int(rng.integers(2, 6)), rng)
        X = rng.uniform(size=(n, d))
        Xa = np.clip(X + rng.uniform(-0.05, 0.05, size=X.shape), 0, 1)
        if kind == LINEAR or not _near_kink(params, X, Xa):
            break
    Y = rng.integers(0, k, size=n)
    weights = WeightSimplex(rng.dirichlet(np.ones(k + 1)))
    return params, LabeledBatch(X, Y, Xa), weights


@pytest.mark.parametrize("kind", [LINEAR, MLP])
def test_weighted_trades_gradient_matches_finite_differences(kind):
    rng = np.random.default_rng(10 if kind == LINEAR else 11)
    for _ in range(50):
        params, batch, weights = _random_instance(rng, kind)
        beta = float(rng.uniform(0, 8))
        assert _max_rel_error(params, batch, LossSpec(TRADES, beta=beta), weights) <= 1e-5


@pytest.mark.parametrize("loss_kind", [CROSS_ENTROPY, KL])
def test_other_smooth_losses_match_finite_differences(loss_kind):
    rng = np.random.default_rng(12)
    for kind in (LINEAR, MLP):
        for _ in range(10):
            params, batch, weights = _random_instance(rng, kind)
            assert _max_rel_error(params, batch, LossSpec(loss_kind), weights) <= 1e-5


def test_ramp_margin_gradient_on_the_linear_branch():
    W = np.array([[1.0, 0.0], [0.0, 1.0], [0.2, 0.2]])
    params = linear_model(W)
    X = np.array([[0.6, 0.3], [0.2, 0.5]])
    Y = np.array([0, 1])
    batch = LabeledBatch(X, Y)
    spec = LossSpec(RAMP_MARGIN, gamma=1.0)
    assert _max_rel_error(params, batch, spec, WeightSimplex([1.0, 0.0, 0.0, 0.0])) <= 1e-5


def test_decay_mask_covers_weights_only():
    params = init_mlp(3, 2, 4, np.random.default_rng(0))
    mask = params.decay_mask()
    assert mask.shape == params.to_vector().shape
    assert mask.sum() == params.w1.size + params.w2.size
    parts = params.with_vector(mask)
    assert np.all(parts.w1 == 1.0) and np.all(parts.w2 == 1.0)
    assert np.all(parts.b1 == 0.0) and np.all(parts.b2 == 0.0)
    assert np.all(linear_model(np.eye(2)).decay_mask() == 1.0)
