import math

import numpy as np
import pytest

from fedecho.errors import ConfigError
from fedecho.models import (
    Batch,
    LinearSoftmax,
    Mlp,
    ModelParams,
    ce_loss_and_grad,
    evaluate,
    forward_logits,
    init_params,
    log_softmax,
    soft_ce_loss_and_grad,
    softmax,
    unpack,
)
from fedecho.rng import stream
from fedecho.verify import finite_difference_grad, max_relative_error


def _random_mlp(seed=0, d=3, h=4, k=3):
    gen = stream(seed, 0).generator()
    arch = Mlp(d, h, k)
    return ModelParams(arch, gen.standard_normal(arch.n_params)), gen


# -- forward -------------------------------------------------------------


def test_zero_weights_give_zero_logits():
    arch = LinearSoftmax(4, 3)
    params = ModelParams(arch, np.zeros(arch.n_params))
    logits = forward_logits(params, np.ones((2, 4)))
    assert np.array_equal(logits, np.zeros((2, 3)))


def test_identity_weights_pass_inputs_through():
    arch = LinearSoftmax(2, 2)
    params = ModelParams(arch, np.eye(2).ravel())
    logits = forward_logits(params, np.array([[3.0, -1.0]]))
    assert np.array_equal(logits[0], [3.0, -1.0])


def test_mlp_forward_matches_loop_oracle():
    params, gen = _random_mlp(seed=3)
    x = gen.standard_normal((5, 3))
    w1, b1, w2, b2 = unpack(params)

    expected = np.zeros((5, 3))
    for n in range(5):
        hidden = [max(0.0, sum(x[n, i] * w1[i, j] for i in range(3)) + b1[j]) for j in range(4)]
        for c in range(3):
            expected[n, c] = sum(hidden[j] * w2[j, c] for j in range(4)) + b2[c]
    got = forward_logits(params, x)
    assert np.max(np.abs(got - expected)) < 1e-12


def test_forward_rejects_wrong_width():
    arch = LinearSoftmax(4, 3)
    params = ModelParams(arch, np.zeros(arch.n_params))
    with pytest.raises(ConfigError):
        forward_logits(params, np.ones((2, 5)))


# -- softmax ---------------------------------------------------------------


def test_softmax_uniform_on_equal_logits():
    assert np.allclose(softmax(np.zeros(3)), [1 / 3] * 3, atol=1e-15)


def test_softmax_survives_huge_logit():
    p = softmax(np.array([1000.0, 0.0]))
    assert np.all(np.isfinite(p))
    assert p[0] > 1 - 1e-12 and p[1] < 1e-12


def test_softmax_exact_exponentials():
    p = softmax(np.log(np.array([1.0, 2.0, 3.0])))
    assert np.max(np.abs(p - np.array([1, 2, 3]) / 6)) < 1e-12


def test_softmax_rows_sum_to_one():
    gen = stream(4, 0).generator()
    z = gen.standard_normal((50, 7)) * 30
    assert np.max(np.abs(softmax(z).sum(axis=1) - 1.0)) < 1e-12


# -- cross-entropy ---------------------------------------------------------


def test_zero_model_loss_is_log_k():
    arch = LinearSoftmax(3, 2)
    params = ModelParams(arch, np.zeros(arch.n_params))
    batch = Batch(np.ones((4, 3)), np.array([0, 1, 0, 1]))
    loss, _ = ce_loss_and_grad(params, batch)
    assert abs(loss - math.log(2)) < 1e-15


def test_single_sample_closed_form_gradient():
    gen = stream(5, 0).generator()
    arch = LinearSoftmax(4, 3)
    params = ModelParams(arch, gen.standard_normal(arch.n_params))
    x = gen.standard_normal(4)
    label = 1
    _, grad = ce_loss_and_grad(params, Batch(x[None, :], np.array([label])))

    (w,) = unpack(params)
    probs = softmax(x @ w)
    probs[label] -= 1.0
    expected = np.outer(x, probs).ravel()
    assert np.max(np.abs(grad - expected)) < 1e-15


def test_gradients_match_finite_differences():
    gen = stream(6, 0).generator()
    for trial in range(20):
        if trial % 2:
            arch = Mlp(int(gen.integers(2, 5)), int(gen.integers(2, 5)), int(gen.integers(2, 4)))
        else:
            arch = LinearSoftmax(int(gen.integers(2, 5)), int(gen.integers(2, 4)))
        params = ModelParams(arch, gen.standard_normal(arch.n_params))
        n = int(gen.integers(1, 5))
        batch = Batch(
            gen.standard_normal((n, arch.n_features)),
            gen.integers(0, arch.n_classes, n),
        )
        _, grad = ce_loss_and_grad(params, batch)
        fd = finite_difference_grad(
            lambda t: ce_loss_and_grad(ModelParams(arch, t), batch)[0],
            params.theta,
        )
        assert max_relative_error(grad, fd) < 1e-6


def test_soft_ce_reduces_to_hard_ce_on_onehot_targets():
    gen = stream(7, 0).generator()
    arch = Mlp(3, 4, 3)
    params = ModelParams(arch, gen.standard_normal(arch.n_params))
    x = gen.standard_normal((6, 3))
    y = gen.integers(0, 3, 6)
    hard_loss, hard_grad = ce_loss_and_grad(params, Batch(x, y))
    soft_loss, soft_grad = soft_ce_loss_and_grad(params, x, np.eye(3)[y])
    assert abs(hard_loss - soft_loss) < 1e-12
    assert np.max(np.abs(hard_grad - soft_grad)) < 1e-12


# -- evaluation ------------------------------------------------------------


def test_uniform_logits_tie_break_to_class_zero():
    arch = LinearSoftmax(2, 4)
    params = ModelParams(arch, np.zeros(arch.n_params))
    batch = Batch(np.ones((4, 2)), np.array([0, 1, 2, 3]))
    accuracy, _ = evaluate(params, batch)
    assert accuracy == 0.25


def test_training_a_separable_pair_reaches_full_accuracy():
    # two opposite points, plain gradient descent to convergence
    arch = LinearSoftmax(2, 2)
    params = ModelParams(arch, np.zeros(arch.n_params))
    batch = Batch(np.array([[1.0, 0.0], [-1.0, 0.0]]), np.array([0, 1]))
    for _ in range(200):
        _, grad = ce_loss_and_grad(params, batch)
        params = ModelParams(arch, params.theta - 0.5 * grad)
    accuracy, loss = evaluate(params, batch)
    assert accuracy == 1.0
    assert loss < 0.1


def test_evaluate_is_pure():
    params, gen = _random_mlp(seed=8)
    batch = Batch(gen.standard_normal((10, 3)), gen.integers(0, 3, 10))
    assert evaluate(params, batch) == evaluate(params, batch)


def test_init_params_bounded_and_reproducible():
    arch = Mlp(9, 4, 3)
    a = init_params(arch, stream(11, 2))
    b = init_params(arch, stream(11, 2))
    assert np.array_equal(a.theta, b.theta)
    w1 = unpack(a)[0]
    assert np.max(np.abs(w1)) <= 1 / 3  # fan_in = 9


def test_log_softmax_consistent_with_softmax():
    gen = stream(12, 0).generator()
    z = gen.standard_normal((4, 5)) * 10
    assert np.max(np.abs(np.exp(log_softmax(z)) - softmax(z))) < 1e-12


def test_batch_validation():
    with pytest.raises(ConfigError):
        Batch(np.ones((2, 3)), np.array([0]))
    with pytest.raises(ConfigError):
        Batch(np.ones((1, 3)), np.array([-1]))
    with pytest.raises(ConfigError):
        Batch(np.ones((0, 3)), np.array([]))
