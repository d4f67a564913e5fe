import math

import numpy as np
import pytest

from fedecho.distill import (
    DistillConfig,
    LogitsCache,
    batch_entropy,
    clip_gradient,
    distill_loss_and_grad,
    distillation_round,
    ensemble_teacher_logits,
    interpolate_alpha,
)
from fedecho.errors import ConfigError, NoTeacherAvailable
from fedecho.linalg import l2_norm
from fedecho.models import Batch, LinearSoftmax, ModelParams, ce_loss_and_grad, forward_logits
from fedecho.rng import stream
from fedecho.verify import finite_difference_grad, max_relative_error


def _cache_with(arrays):
    cache = LogitsCache()
    for cid, arr in enumerate(arrays):
        cache.store(cid, arr)
    return cache


# -- ensembling --------------------------------------------------------------


def test_single_client_ensemble_is_verbatim():
    logits = stream(0, 0).generator().standard_normal((6, 3))
    cache = _cache_with([logits])
    out = ensemble_teacher_logits(cache, np.arange(6))
    assert np.array_equal(out, logits)


def test_opposite_logits_cancel():
    z = stream(1, 0).generator().standard_normal((5, 4))
    cache = _cache_with([z, -z])
    out = ensemble_teacher_logits(cache, np.arange(5))
    assert np.max(np.abs(out)) < 1e-15


def test_ensemble_matches_mean_oracle():
    gen = stream(2, 0).generator()
    arrays = [gen.standard_normal((8, 3)) for _ in range(3)]
    cache = _cache_with(arrays)
    rows = np.array([1, 4, 6])
    out = ensemble_teacher_logits(cache, rows)
    expected = np.zeros((3, 3))
    for r, row in enumerate(rows):
        for c in range(3):
            expected[r, c] = sum(a[row, c] for a in arrays) / 3
    assert np.max(np.abs(out - expected)) < 1e-12


def test_empty_cache_raises():
    with pytest.raises(NoTeacherAvailable):
        ensemble_teacher_logits(LogitsCache(), [0])


def test_cache_overwrites_per_client():
    cache = LogitsCache()
    cache.store(3, np.zeros((2, 2)))
    cache.store(3, np.ones((2, 2)))
    assert len(cache) == 1
    assert np.array_equal(cache.get(3), np.ones((2, 2)))


# -- entropy and mixing weight ------------------------------------------------


def test_uniform_logits_have_unit_normalized_entropy():
    for k in (2, 3, 10):
        per_sample, normalized = batch_entropy(np.zeros((4, k)), k)
        assert np.max(np.abs(per_sample - math.log(k))) < 1e-12
        assert abs(normalized - 1.0) < 1e-12


def test_peaked_logits_have_near_zero_entropy():
    z = np.zeros((3, 5))
    z[:, 0] = 1000.0
    per_sample, normalized = batch_entropy(z, 5)
    assert np.max(per_sample) < 1e-3
    assert normalized < 1e-3


def test_hand_evaluated_two_class_entropy():
    # softmax([0, log 3]) = [0.25, 0.75]
    z = np.array([[0.0, math.log(3.0)]] * 4)
    _, normalized = batch_entropy(z, 2)
    expected = -(0.25 * math.log(0.25) + 0.75 * math.log(0.75)) / math.log(2)
    assert abs(normalized - expected) < 1e-12
    assert abs(expected - 0.8113) < 5e-5


def test_entropy_requires_two_classes():
    with pytest.raises(ConfigError):
        batch_entropy(np.zeros((2, 1)), 1)


def test_alpha_interpolation_endpoints_and_midpoint():
    cfg = DistillConfig(alpha_min=0.2, alpha_max=0.8)
    assert interpolate_alpha(1.0, cfg) == 0.8
    assert interpolate_alpha(0.0, cfg) == 0.2
    assert interpolate_alpha(0.5, cfg) == pytest.approx(0.5, abs=1e-15)


def test_alpha_monotone_and_clamped():
    cfg = DistillConfig(alpha_min=0.1, alpha_max=0.6)
    values = [interpolate_alpha(h, cfg) for h in np.linspace(0, 1, 11)]
    assert all(b >= a for a, b in zip(values, values[1:]))
    assert all(cfg.alpha_min <= v <= cfg.alpha_max for v in values)


# -- blended loss ------------------------------------------------------------


def _random_student(gen, d=4, k=3):
    arch = LinearSoftmax(d, k)
    return ModelParams(arch, gen.standard_normal(arch.n_params))


def test_matching_logits_give_zero_kl_loss_and_grad():
    gen = stream(3, 0).generator()
    student = _random_student(gen)
    x = gen.standard_normal((5, 4))
    teacher = forward_logits(student, x)
    loss, grad = distill_loss_and_grad(student, x, teacher, alpha=1.0)
    assert abs(loss) < 1e-12
    assert np.max(np.abs(grad)) < 1e-12


def test_alpha_zero_reduces_to_hard_ce():
    gen = stream(4, 0).generator()
    student = _random_student(gen)
    x = gen.standard_normal((6, 4))
    teacher = gen.standard_normal((6, 3))
    loss, grad = distill_loss_and_grad(student, x, teacher, alpha=0.0)
    hard = np.argmax(teacher, axis=1)
    ce_loss, ce_grad = ce_loss_and_grad(student, Batch(x, hard))
    assert abs(loss - ce_loss) < 1e-12
    assert np.max(np.abs(grad - ce_grad)) < 1e-12


def test_blended_gradient_matches_finite_differences():
    gen = stream(5, 0).generator()
    for alpha in (0.0, 0.3, 0.5, 1.0):
        student = _random_student(gen)
        x = gen.standard_normal((4, 4))
        teacher = gen.standard_normal((4, 3)) * 2
        _, grad = distill_loss_and_grad(student, x, teacher, alpha)
        fd = finite_difference_grad(
            lambda t: distill_loss_and_grad(
                ModelParams(student.arch, t), x, teacher, alpha
            )[0],
            student.theta,
        )
        assert max_relative_error(grad, fd) < 1e-6


def test_kl_loss_invariant_to_teacher_logit_shift():
    gen = stream(6, 0).generator()
    student = _random_student(gen)
    x = gen.standard_normal((5, 4))
    teacher = gen.standard_normal((5, 3))
    base, _ = distill_loss_and_grad(student, x, teacher, alpha=1.0)
    shifted, _ = distill_loss_and_grad(student, x, teacher + 7.5, alpha=1.0)
    assert abs(base - shifted) < 1e-10


def test_hard_labels_invariant_to_positive_rescaling():
    gen = stream(7, 0).generator()
    teacher = gen.standard_normal((20, 6))
    assert np.array_equal(
        np.argmax(teacher, axis=1), np.argmax(3.7 * teacher, axis=1)
    )


# -- clipping ----------------------------------------------------------------


def test_clip_rescales_large_gradients():
    g = np.full(4, 5.0)  # norm 10
    out = clip_gradient(g, 5.0)
    assert abs(l2_norm(out) - 5.0) < 1e-12


def test_clip_leaves_small_gradients_alone():
    g = np.array([3.0, 0.0])
    out = clip_gradient(g, 5.0)
    assert np.array_equal(out, g)


def test_clip_infinite_threshold_is_identity():
    g = stream(8, 0).generator().standard_normal(100) * 1e6
    assert np.array_equal(clip_gradient(g, math.inf), g)


def test_clip_never_exceeds_threshold_and_keeps_direction():
    gen = stream(9, 0).generator()
    for _ in range(200):
        g = gen.standard_normal(int(gen.integers(1, 50))) * 10.0 ** int(gen.integers(-2, 4))
        nu = float(gen.choice([0.1, 1.0, 5.0]))
        out = clip_gradient(g, nu)
        assert l2_norm(out) <= nu
        cos = np.dot(g, out) / (l2_norm(g) * l2_norm(out))
        assert abs(1.0 - cos) < 1e-12


# -- full round ----------------------------------------------------------------


def _pool_and_cache(gen, student, n_pool=40):
    pool = gen.standard_normal((n_pool, student.arch.n_features))
    teacher = ModelParams(student.arch, gen.standard_normal(student.arch.n_params))
    cache = LogitsCache()
    cache.store(0, forward_logits(teacher, pool))
    return pool, cache


def test_zero_rate_round_returns_student_unchanged():
    gen = stream(10, 0).generator()
    student = _random_student(gen)
    pool, cache = _pool_and_cache(gen, student)
    cfg = DistillConfig(eta_d=0.0, batch_size=16, steps=1)
    out, stats = distillation_round(student, pool, cache, cfg, stream(10, 6))
    assert np.array_equal(out.theta, student.theta)
    assert stats.steps == 1 and not stats.skipped


def test_empty_cache_round_is_skipped():
    gen = stream(11, 0).generator()
    student = _random_student(gen)
    pool = gen.standard_normal((20, 4))
    out, stats = distillation_round(student, pool, LogitsCache(), DistillConfig(), stream(11, 6))
    assert out is student
    assert stats.skipped


def test_round_is_reproducible():
    gen = stream(12, 0).generator()
    student = _random_student(gen)
    pool, cache = _pool_and_cache(gen, student)
    cfg = DistillConfig(eta_d=0.05, batch_size=8)
    a, _ = distillation_round(student, pool, cache, cfg, stream(12, 6))
    b, _ = distillation_round(student, pool, cache, cfg, stream(12, 6))
    assert np.array_equal(a.theta, b.theta)


def test_round_matches_step_by_step_oracle_with_sgd():
    # replay the exact batch order and recompute each update by hand
    gen = stream(13, 0).generator()
    student = _random_student(gen)
    pool, cache = _pool_and_cache(gen, student, n_pool=24)
    cfg = DistillConfig(eta_d=0.1, batch_size=8, optimizer="sgd", nu=5.0)
    out, stats = distillation_round(student, pool, cache, cfg, stream(13, 6))

    replay_gen = stream(13, 6).generator()
    perm = replay_gen.permutation(24)
    theta = student.theta.copy()
    alphas = []
    for start in (0, 8, 16):
        rows = perm[start : start + 8]
        teacher = ensemble_teacher_logits(cache, rows)
        _, h_hat = batch_entropy(teacher, 3)
        alpha = interpolate_alpha(h_hat, cfg)
        alphas.append(alpha)
        _, grad = distill_loss_and_grad(ModelParams(student.arch, theta), pool[rows], teacher, alpha)
        grad = clip_gradient(grad, cfg.nu)
        theta = theta - cfg.eta_d * grad
    assert np.array_equal(out.theta, theta)
    assert stats.alpha_mean == pytest.approx(np.mean(alphas))


def test_steps_default_is_one_pass():
    cfg = DistillConfig(batch_size=128)
    assert cfg.steps_for_pool(2000) == 16  # ceil(2000/128)
    assert cfg.steps_for_pool(100) == 1


def test_config_validation():
    with pytest.raises(ConfigError):
        DistillConfig(alpha_min=0.9, alpha_max=0.1)
    with pytest.raises(ConfigError):
        DistillConfig(nu=0.0)
    with pytest.raises(ConfigError):
        DistillConfig(steps=0)
    with pytest.raises(ConfigError):
        DistillConfig(optimizer="lbfgs")
