"""Server-side uncertainty-aware distillation.

The server keeps the latest raw logits of every client that has delivered
an update, ensembles them by element-wise mean, and runs a few optimizer
steps per aggregation round on a blended loss: KL divergence against the
ensemble's soft predictions, mixed with cross-entropy against its hard
argmax labels. The mixing weight follows the normalized batch entropy of
the ensemble, so uncertain teachers push the student toward soft targets
and confident teachers toward hard ones. Gradients are norm-clipped before
the optimizer step.

The module also houses the executable checks for the two closed-form
decompositions of the distillation gradient (linear-softmax and generic
architectures).
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, NoTeacherAvailable
from .linalg import as_matrix, l2_norm
from .models import (
    Batch,
    LinearSoftmax,
    Mlp,
    ModelParams,
    _forward,
    _grad_from_logit_grad,
    ce_loss_and_grad,
    log_softmax,
    soft_ce_loss_and_grad,
    softmax,
    unpack,
)
from .rng import RngStream


class LogitsCache:
    """Latest raw logits per client over the full unlabeled pool.

    A slot exists iff the client has delivered at least one update; a new
    delivery overwrites the previous slot. Values are raw logits, never
    probabilities.
    """

    def __init__(self):
        self._slots: dict[int, np.ndarray] = {}

    def store(self, client_id: int, logits: np.ndarray) -> None:
        self._slots[int(client_id)] = as_matrix(logits, "client logits").copy()

    def __len__(self) -> int:
        return len(self._slots)

    def __contains__(self, client_id: int) -> bool:
        return int(client_id) in self._slots

    def client_ids(self) -> list[int]:
        return sorted(self._slots)

    def get(self, client_id: int) -> np.ndarray:
        return self._slots[int(client_id)]


def ensemble_teacher_logits(cache: LogitsCache, batch_rows) -> np.ndarray:
    """Element-wise mean of all cached client logits on the given rows.

    Clients are averaged in sorted-id order so the result is independent
    of delivery history.
    """
    if len(cache) == 0:
        raise NoTeacherAvailable("no client logits cached yet")
    rows = np.asarray(batch_rows, dtype=np.int64)
    stacked = np.stack([cache.get(c)[rows] for c in cache.client_ids()])
    return stacked.mean(axis=0)


def batch_entropy(teacher_logits: np.ndarray, n_classes: int) -> tuple[np.ndarray, float]:
    """Per-sample Shannon entropy of the teacher softmax, plus the batch
    mean normalized by log(n_classes) into [0, 1]. 0*log(0) counts as 0."""
    if n_classes < 2:
        raise ConfigError(f"entropy needs at least 2 classes, got {n_classes}")
    probs = softmax(as_matrix(teacher_logits, "teacher logits"))
    plogp = np.where(probs > 0.0, probs * np.log(np.where(probs > 0.0, probs, 1.0)), 0.0)
    per_sample = -plogp.sum(axis=1)
    normalized = float(np.clip(per_sample.mean() / math.log(n_classes), 0.0, 1.0))
    return per_sample, normalized


@dataclass(frozen=True)
class DistillConfig:
    """Hyperparameters of the per-round distillation loop."""

    eta_d: float = 0.05
    alpha_min: float = 0.2
    alpha_max: float = 0.8
    nu: float = 5.0
    batch_size: int = 128
    steps: int | None = None  # None = one pass over the pool
    optimizer: str = "adam"
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    def __post_init__(self):
        if not (0.0 <= self.alpha_min <= self.alpha_max <= 1.0):
            raise ConfigError(
                f"need 0 <= alpha_min <= alpha_max <= 1, got "
                f"({self.alpha_min}, {self.alpha_max})"
            )
        if self.nu <= 0:
            raise ConfigError(f"clip threshold must be positive, got {self.nu}")
        if self.eta_d < 0:
            raise ConfigError(f"distillation rate must be >= 0, got {self.eta_d}")
        if self.batch_size < 1:
            raise ConfigError("distillation batch size must be >= 1")
        if self.steps is not None and self.steps < 1:
            raise ConfigError("distillation steps must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown distillation optimizer {self.optimizer!r}")

    def steps_for_pool(self, pool_size: int) -> int:
        if self.steps is not None:
            return self.steps
        return max(1, math.ceil(pool_size / self.batch_size))


def interpolate_alpha(h_hat: float, cfg: DistillConfig) -> float:
    """alpha = H*alpha_max + (1-H)*alpha_min; affine, endpoints exact."""
    if not 0.0 <= h_hat <= 1.0:
        raise ConfigError(f"normalized entropy must lie in [0, 1], got {h_hat}")
    return h_hat * cfg.alpha_max + (1.0 - h_hat) * cfg.alpha_min


def distill_loss_and_grad(
    student: ModelParams,
    inputs: np.ndarray,
    teacher_logits: np.ndarray,
    alpha: float,
) -> tuple[float, np.ndarray]:
    """Blended distillation loss and its gradient w.r.t. the student.

    loss = alpha * KL(softmax(teacher) || softmax(student))
         + (1 - alpha) * CE(student logits, argmax(teacher)),
    mean over the batch, natural log, teacher treated as a constant.
    Argmax ties resolve to the lowest class.
    """
    if not 0.0 <= alpha <= 1.0:
        raise ConfigError(f"alpha must lie in [0, 1], got {alpha}")
    inputs = as_matrix(inputs, "inputs")
    teacher_logits = as_matrix(teacher_logits, "teacher logits")
    logits, cache = _forward(student, inputs)
    if logits.shape != teacher_logits.shape:
        raise ConfigError(
            f"student logits {logits.shape} vs teacher logits {teacher_logits.shape}"
        )
    n, _ = logits.shape
    log_q = log_softmax(logits)
    q = np.exp(log_q)
    p = softmax(teacher_logits)
    hard = np.argmax(teacher_logits, axis=1)

    plogp = np.where(p > 0.0, p * np.log(np.where(p > 0.0, p, 1.0)), 0.0)
    kl = float((plogp - p * log_q).sum(axis=1).mean())
    ce = -float(log_q[np.arange(n), hard].mean())
    loss = alpha * kl + (1.0 - alpha) * ce

    d_logits = alpha * (q - p)
    d_logits[np.arange(n), hard] -= 1.0 - alpha
    d_logits += (1.0 - alpha) * q
    # the line above splits (1-alpha)*(q - onehot) to stay vectorized
    d_logits /= n
    grad = _grad_from_logit_grad(student, inputs, d_logits, cache)
    return loss, grad


def clip_gradient(g: np.ndarray, nu: float) -> np.ndarray:
    """Scale g to L2 norm nu when it exceeds nu; identity otherwise.

    nu = inf disables clipping. The output norm never exceeds nu, even
    after rounding of the rescale.
    """
    if nu <= 0:
        raise ConfigError(f"clip threshold must be positive, got {nu}")
    g = np.asarray(g, dtype=np.float64)
    norm = l2_norm(g)
    if math.isinf(nu) or norm <= nu:
        return g
    out = g * (nu / norm)
    # guard against the rescaled norm landing a few ulps above nu
    for _ in range(4):
        out_norm = l2_norm(out)
        if out_norm <= nu:
            break
        out = out * (nu / out_norm)
    return out


class _SgdStep:
    def __init__(self, eta: float):
        self.eta = eta

    def step(self, grad: np.ndarray) -> np.ndarray:
        return self.eta * grad


class _AdamStep:
    """Plain Adam with bias correction; returns the vector to subtract."""

    def __init__(self, eta: float, beta1: float, beta2: float, eps: float, size: int):
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.m = np.zeros(size)
        self.v = np.zeros(size)
        self.t = 0

    def step(self, grad: np.ndarray) -> np.ndarray:
        self.t += 1
        self.m = self.beta1 * self.m + (1.0 - self.beta1) * grad
        self.v = self.beta2 * self.v + (1.0 - self.beta2) * grad * grad
        m_hat = self.m / (1.0 - self.beta1**self.t)
        v_hat = self.v / (1.0 - self.beta2**self.t)
        return self.eta * m_hat / (np.sqrt(v_hat) + self.eps)


def make_optimizer(cfg: DistillConfig, size: int):
    if cfg.optimizer == "sgd":
        return _SgdStep(cfg.eta_d)
    return _AdamStep(cfg.eta_d, cfg.beta1, cfg.beta2, cfg.eps, size)


@dataclass
class DistillRoundStats:
    """Per-round bookkeeping surfaced into the metrics records."""

    steps: int = 0
    skipped: bool = False
    alpha_mean: float = float("nan")
    entropy_mean: float = float("nan")
    loss_mean: float = float("nan")


def _batch_indices(pool_size: int, batch_size: int, steps: int, gen) -> list[np.ndarray]:
    """Without-replacement batches, reshuffling whenever a pass runs out."""
    out: list[np.ndarray] = []
    while len(out) < steps:
        perm = gen.permutation(pool_size)
        for start in range(0, pool_size, batch_size):
            out.append(perm[start : start + batch_size])
            if len(out) == steps:
                break
    return out


def distillation_round(
    student: ModelParams,
    pool: np.ndarray,
    cache: LogitsCache,
    cfg: DistillConfig,
    rng: RngStream,
) -> tuple[ModelParams, DistillRoundStats]:
    """Run one round of distillation steps and return the updated student.

    Each step samples a batch from the pool, ensembles the cached teacher
    logits on it, recomputes the entropy-driven mixing weight for that
    batch, clips the gradient, and applies the optimizer step. An empty
    cache skips the round and returns the student unchanged.
    """
    stats = DistillRoundStats()
    if len(cache) == 0:
        stats.skipped = True
        return student, stats
    pool = as_matrix(pool, "unlabeled pool")
    n_classes = student.arch.n_classes
    steps = cfg.steps_for_pool(pool.shape[0])
    gen = rng.generator()
    batches = _batch_indices(pool.shape[0], cfg.batch_size, steps, gen)

    theta = student.theta.copy()
    opt = make_optimizer(cfg, theta.size)
    alphas, entropies, losses = [], [], []
    for rows in batches:
        current = ModelParams(student.arch, theta)
        teacher = ensemble_teacher_logits(cache, rows)
        _, h_hat = batch_entropy(teacher, n_classes)
        alpha = interpolate_alpha(h_hat, cfg)
        loss, grad = distill_loss_and_grad(current, pool[rows], teacher, alpha)
        grad = clip_gradient(grad, cfg.nu)
        theta = theta - opt.step(grad)
        alphas.append(alpha)
        entropies.append(h_hat)
        losses.append(loss)

    stats.steps = steps
    stats.alpha_mean = float(np.mean(alphas))
    stats.entropy_mean = float(np.mean(entropies))
    stats.loss_mean = float(np.mean(losses))
    return ModelParams(student.arch, theta), stats


def _mean_teacher_probs(teachers: list[ModelParams], inputs: np.ndarray) -> np.ndarray:
    probs = [softmax(_forward(t, inputs)[0]) for t in teachers]
    return np.mean(np.stack(probs), axis=0)


def verify_identity_linear(
    student: ModelParams,
    teachers: list[ModelParams],
    inputs: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Max elementwise gap of the linear-softmax gradient decomposition.

    With soft targets s = mean of teacher softmax outputs, the gradient of
    the soft-target cross-entropy at the student equals the student's own
    hard-label CE gradient minus the mean of the teachers' hard-label CE
    gradients (the labels cancel). The left side is computed by backprop
    on the soft loss, the right side from the closed-form CE gradients.
    Checked per sample and for the batch mean; returns the worst gap.
    """
    _require_shared_arch(student, teachers, LinearSoftmax)
    inputs = as_matrix(inputs, "inputs")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    soft = _mean_teacher_probs(teachers, inputs)

    def gap(x: np.ndarray, s: np.ndarray, y: np.ndarray) -> float:
        _, lhs = soft_ce_loss_and_grad(student, x, s)
        batch = Batch(x, y)
        _, g_student = ce_loss_and_grad(student, batch)
        teacher_grads = [ce_loss_and_grad(t, batch)[1] for t in teachers]
        rhs = g_student - np.mean(np.stack(teacher_grads), axis=0)
        return float(np.max(np.abs(lhs - rhs)))

    worst = gap(inputs, soft, labels)
    for n in range(inputs.shape[0]):
        worst = max(worst, gap(inputs[n : n + 1], soft[n : n + 1], labels[n : n + 1]))
    return worst


def _mlp_logit_jacobian(params: ModelParams, x: np.ndarray) -> np.ndarray:
    """(n_classes x n_params) Jacobian of the logits at one input row.

    Deliberately written with explicit loops as an independent oracle for
    the backprop path; only used on tiny networks.
    """
    arch = params.arch
    d, h, k = arch.n_features, arch.n_hidden, arch.n_classes
    w1, b1, w2, _ = unpack(params)
    pre = np.array([sum(x[i] * w1[i, j] for i in range(d)) + b1[j] for j in range(h)])
    act = (pre > 0.0).astype(np.float64)
    hidden = np.maximum(pre, 0.0)

    jac = np.zeros((k, arch.n_params))
    off_b1 = d * h
    off_w2 = d * h + h
    off_b2 = d * h + h + h * k
    for c in range(k):
        for i in range(d):
            for j in range(h):
                jac[c, i * h + j] = act[j] * w2[j, c] * x[i]
        for j in range(h):
            jac[c, off_b1 + j] = act[j] * w2[j, c]
            jac[c, off_w2 + j * k + c] = hidden[j]
        jac[c, off_b2 + c] = 1.0
    return jac


def verify_identity_generic(
    student: ModelParams,
    teachers: list[ModelParams],
    inputs: np.ndarray,
    labels: np.ndarray,
) -> float:
    """Max elementwise gap of the generic-architecture decomposition.

    The distillation gradient must equal the student's logit Jacobian
    applied to the residual (student probs - mean teacher probs), where
    the residual is assembled from hard-label logit gradients so the
    ground-truth labels cancel. Side one: backprop on the soft-target
    loss. Side two: explicit Jacobian rows times the residual.
    """
    _require_shared_arch(student, teachers, Mlp)
    inputs = as_matrix(inputs, "inputs")
    labels = np.asarray(labels, dtype=np.int64).ravel()
    k = student.arch.n_classes
    soft = _mean_teacher_probs(teachers, inputs)
    _, backprop_grad = soft_ce_loss_and_grad(student, inputs, soft)

    onehot = np.eye(k)[labels]
    student_probs = softmax(_forward(student, inputs)[0])
    teacher_probs = [softmax(_forward(t, inputs)[0]) for t in teachers]
    residual = (student_probs - onehot) - np.mean(
        np.stack([tp - onehot for tp in teacher_probs]), axis=0
    )

    n = inputs.shape[0]
    assembled = np.zeros_like(backprop_grad)
    for row in range(n):
        jac = _mlp_logit_jacobian(student, inputs[row])
        assembled += jac.T @ residual[row]
    assembled /= n
    return float(np.max(np.abs(backprop_grad - assembled)))


def _require_shared_arch(student: ModelParams, teachers: list[ModelParams], kind) -> None:
    if not teachers:
        raise ConfigError("need at least one teacher model")
    for m in [student, *teachers]:
        if not isinstance(m.arch, kind):
            raise ConfigError(f"expected {kind.__name__} models, got {m.arch}")
        if m.arch != student.arch:
            raise ConfigError(
                f"architecture mismatch: {m.arch} vs {student.arch}"
            )
