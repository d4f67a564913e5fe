"""Property suites over random instances, runnable from the CLI.

Each suite draws seeded random instances, measures its worst error against
an independent oracle (finite differences, explicit Jacobian assembly, or
a direct postcondition), and reports it against a fixed threshold.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .distill import (
    DistillConfig,
    batch_entropy,
    clip_gradient,
    distill_loss_and_grad,
    interpolate_alpha,
    verify_identity_generic,
    verify_identity_linear,
)
from .errors import ConfigError
from .linalg import l2_norm
from .models import (
    Batch,
    LinearSoftmax,
    ModelParams,
    Mlp,
    ce_loss_and_grad,
    init_params,
    soft_ce_loss_and_grad,
)
from .rng import RngStream


def finite_difference_grad(f, theta: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central finite differences of a scalar function of a flat vector."""
    grad = np.zeros_like(theta)
    for j in range(theta.size):
        bumped = theta.copy()
        bumped[j] += h
        up = f(bumped)
        bumped[j] -= 2 * h
        down = f(bumped)
        grad[j] = (up - down) / (2 * h)
    return grad


def max_relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """Elementwise |a-b| / max(1, |a|, |b|), reduced to the maximum."""
    denom = np.maximum(1.0, np.maximum(np.abs(a), np.abs(b)))
    return float(np.max(np.abs(a - b) / denom))


@dataclass
class VerifyResult:
    kind: str
    trials: int
    max_error: float
    threshold: float
    passed: bool
    detail: str = ""


def _random_model(gen, arch_kind: str) -> ModelParams:
    d = int(gen.integers(2, 7))
    k = int(gen.integers(2, 6))
    if arch_kind == "mlp":
        h = int(gen.integers(2, 7))
        arch = Mlp(d, h, k)
    else:
        arch = LinearSoftmax(d, k)
    rng = RngStream(int(gen.integers(0, 2**31)), (99,))
    return init_params(arch, rng)


def _random_batch(gen, model: ModelParams, n: int) -> Batch:
    d = model.arch.n_features
    k = model.arch.n_classes
    x = gen.standard_normal((n, d))
    y = gen.integers(0, k, n)
    return Batch(x, y)


def verify_grad_fd(trials: int, seed: int) -> VerifyResult:
    """CE and blended distillation losses against central differences."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    gen = RngStream(seed, (1,)).generator()
    worst = 0.0
    for trial in range(trials):
        model = _random_model(gen, "mlp" if trial % 2 else "linear")
        batch = _random_batch(gen, model, int(gen.integers(1, 6)))
        _, grad = ce_loss_and_grad(model, batch)
        fd = finite_difference_grad(
            lambda t: ce_loss_and_grad(ModelParams(model.arch, t), batch)[0],
            model.theta,
        )
        worst = max(worst, max_relative_error(grad, fd))

        teacher = gen.standard_normal((len(batch), model.arch.n_classes)) * 2.0
        for alpha in (0.0, 0.5, 1.0):
            _, grad = distill_loss_and_grad(model, batch.inputs, teacher, alpha)
            fd = finite_difference_grad(
                lambda t: distill_loss_and_grad(
                    ModelParams(model.arch, t), batch.inputs, teacher, alpha
                )[0],
                model.theta,
            )
            worst = max(worst, max_relative_error(grad, fd))
    return VerifyResult("grad-fd", trials, worst, 1e-6, worst < 1e-6)


def verify_identity_linear_suite(trials: int, seed: int) -> VerifyResult:
    """Linear-softmax gradient decomposition on random instances."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    gen = RngStream(seed, (2,)).generator()
    worst = 0.0
    for _ in range(trials):
        d = int(gen.integers(2, 9))
        k = int(gen.integers(2, 6))
        n_teachers = int(gen.integers(1, 11))
        arch = LinearSoftmax(d, k)
        student = ModelParams(arch, gen.standard_normal(arch.n_params))
        teachers = [
            ModelParams(arch, gen.standard_normal(arch.n_params))
            for _ in range(n_teachers)
        ]
        n = int(gen.integers(1, 6))
        inputs = gen.standard_normal((n, d))
        labels = gen.integers(0, k, n)
        worst = max(worst, verify_identity_linear(student, teachers, inputs, labels))
    return VerifyResult("identity-linear", trials, worst, 1e-10, worst < 1e-10)


def verify_identity_generic_suite(trials: int, seed: int) -> VerifyResult:
    """MLP decomposition: backprop vs explicit Jacobian, plus an fd check
    of the soft-target loss itself."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    gen = RngStream(seed, (3,)).generator()
    worst_jac = 0.0
    worst_fd = 0.0
    for _ in range(trials):
        d = int(gen.integers(2, 7))
        h = int(gen.integers(2, 7))
        k = int(gen.integers(2, 7))
        arch = Mlp(d, h, k)
        student = ModelParams(arch, gen.standard_normal(arch.n_params))
        teachers = [
            ModelParams(arch, gen.standard_normal(arch.n_params))
            for _ in range(int(gen.integers(1, 6)))
        ]
        n = int(gen.integers(1, 5))
        inputs = gen.standard_normal((n, d))
        labels = gen.integers(0, k, n)
        worst_jac = max(
            worst_jac, verify_identity_generic(student, teachers, inputs, labels)
        )

        from .distill import _mean_teacher_probs

        soft = _mean_teacher_probs(teachers, inputs)
        _, grad = soft_ce_loss_and_grad(student, inputs, soft)
        fd = finite_difference_grad(
            lambda t: soft_ce_loss_and_grad(ModelParams(arch, t), inputs, soft)[0],
            student.theta,
        )
        worst_fd = max(worst_fd, max_relative_error(grad, fd))
    passed = worst_jac < 1e-8 and worst_fd < 1e-6
    return VerifyResult(
        "identity-generic",
        trials,
        worst_jac,
        1e-8,
        passed,
        detail=f"fd relative error {worst_fd:.3e} (threshold 1e-06)",
    )


def verify_clip(trials: int, seed: int) -> VerifyResult:
    """Clipping postconditions: norm bound and direction preservation."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    gen = RngStream(seed, (4,)).generator()
    worst = 0.0
    for _ in range(trials):
        g = gen.standard_normal(int(gen.integers(1, 200))) * 10.0 ** int(
            gen.integers(-3, 4)
        )
        nu = float(gen.choice([0.5, 1.0, 5.0, math.inf]))
        clipped = clip_gradient(g, nu)
        norm = l2_norm(clipped)
        if math.isfinite(nu):
            worst = max(worst, max(0.0, norm - nu))
        g_norm = l2_norm(g)
        if g_norm > 0 and norm > 0:
            cosine = float(np.dot(g, clipped) / (g_norm * norm))
            worst = max(worst, abs(1.0 - cosine))
        if math.isinf(nu) and not np.array_equal(clipped, g):
            worst = max(worst, 1.0)
    return VerifyResult("clip", trials, worst, 1e-12, worst <= 1e-12)


def verify_entropy(trials: int, seed: int) -> VerifyResult:
    """Entropy normalization and mixing-weight endpoint contracts."""
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    gen = RngStream(seed, (5,)).generator()
    cfg = DistillConfig(alpha_min=0.2, alpha_max=0.8)
    worst = 0.0
    ok = True
    for _ in range(trials):
        k = int(gen.integers(2, 12))
        n = int(gen.integers(1, 8))
        _, h_uniform = batch_entropy(np.zeros((n, k)), k)
        worst = max(worst, abs(h_uniform - 1.0))

        onehot = np.full((n, k), 0.0)
        onehot[:, int(gen.integers(0, k))] = 1000.0
        _, h_peak = batch_entropy(onehot, k)
        ok = ok and h_peak < 1e-3

        _, h_rand = batch_entropy(gen.standard_normal((n, k)) * 3, k)
        ok = ok and 0.0 <= h_rand <= 1.0
        alpha = interpolate_alpha(h_rand, cfg)
        ok = ok and cfg.alpha_min <= alpha <= cfg.alpha_max
    ok = ok and interpolate_alpha(0.0, cfg) == cfg.alpha_min
    ok = ok and interpolate_alpha(1.0, cfg) == cfg.alpha_max
    return VerifyResult("entropy", trials, worst, 1e-12, ok and worst < 1e-12)


VERIFIERS = {
    "grad-fd": verify_grad_fd,
    "identity-linear": verify_identity_linear_suite,
    "identity-generic": verify_identity_generic_suite,
    "clip": verify_clip,
    "entropy": verify_entropy,
}


def run_verifier(kind: str, trials: int, seed: int) -> VerifyResult:
    if kind not in VERIFIERS:
        raise ConfigError(
            f"unknown verification kind {kind!r}; choose from {sorted(VERIFIERS)}"
        )
    return VERIFIERS[kind](trials, seed)
