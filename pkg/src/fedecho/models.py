"""Classification models on flat float64 parameter vectors.

Two architectures: a linear map into a softmax head, and a one-hidden-layer
ReLU MLP with a softmax head. Losses use mean reduction over the batch so
learning rates are batch-size independent. All gradients are analytic and
checked against central finite differences in the test suite.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .linalg import as_matrix, check_finite
from .rng import RngStream


@dataclass(frozen=True)
class LinearSoftmax:
    """z = x @ W with W of shape (n_features, n_classes)."""

    n_features: int
    n_classes: int

    def __post_init__(self):
        if self.n_features < 1 or self.n_classes < 2:
            raise ConfigError(
                f"need n_features >= 1 and n_classes >= 2, got {self}"
            )

    @property
    def n_params(self) -> int:
        return self.n_features * self.n_classes


@dataclass(frozen=True)
class Mlp:
    """z = relu(x @ W1 + b1) @ W2 + b2."""

    n_features: int
    n_hidden: int
    n_classes: int

    def __post_init__(self):
        if self.n_features < 1 or self.n_hidden < 1 or self.n_classes < 2:
            raise ConfigError(
                f"need positive sizes and n_classes >= 2, got {self}"
            )

    @property
    def n_params(self) -> int:
        d, h, k = self.n_features, self.n_hidden, self.n_classes
        return d * h + h + h * k + k


Arch = LinearSoftmax | Mlp


@dataclass
class ModelParams:
    """An architecture plus its flat parameter vector."""

    arch: Arch
    theta: np.ndarray

    def __post_init__(self):
        self.theta = np.asarray(self.theta, dtype=np.float64).ravel()
        if self.theta.size != self.arch.n_params:
            raise ConfigError(
                f"theta has {self.theta.size} entries, arch needs {self.arch.n_params}"
            )
        check_finite(self.theta, "theta")

    def copy(self) -> "ModelParams":
        return ModelParams(self.arch, self.theta.copy())


@dataclass(frozen=True)
class Batch:
    """Inputs (n x d) with integer labels in [0, n_classes)."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", as_matrix(self.inputs, "batch inputs"))
        labels = np.asarray(self.labels, dtype=np.int64).ravel()
        object.__setattr__(self, "labels", labels)
        if self.inputs.shape[0] < 1:
            raise ConfigError("batch must contain at least one sample")
        if labels.shape[0] != self.inputs.shape[0]:
            raise ConfigError(
                f"{labels.shape[0]} labels for {self.inputs.shape[0]} inputs"
            )
        if labels.size and labels.min() < 0:
            raise ConfigError("labels must be non-negative")

    def __len__(self) -> int:
        return self.inputs.shape[0]


def init_params(arch: Arch, rng: RngStream) -> ModelParams:
    """Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] per layer."""
    gen = rng.generator()
    if isinstance(arch, LinearSoftmax):
        bound = 1.0 / np.sqrt(arch.n_features)
        theta = gen.uniform(-bound, bound, arch.n_params)
        return ModelParams(arch, theta)
    d, h, k = arch.n_features, arch.n_hidden, arch.n_classes
    b_in = 1.0 / np.sqrt(d)
    b_hid = 1.0 / np.sqrt(h)
    theta = np.concatenate(
        [
            gen.uniform(-b_in, b_in, d * h),
            gen.uniform(-b_in, b_in, h),
            gen.uniform(-b_hid, b_hid, h * k),
            gen.uniform(-b_hid, b_hid, k),
        ]
    )
    return ModelParams(arch, theta)


def unpack(params: ModelParams):
    """Views of the flat vector as weight blocks (no copies)."""
    arch = params.arch
    if isinstance(arch, LinearSoftmax):
        return (params.theta.reshape(arch.n_features, arch.n_classes),)
    d, h, k = arch.n_features, arch.n_hidden, arch.n_classes
    t = params.theta
    w1 = t[: d * h].reshape(d, h)
    b1 = t[d * h : d * h + h]
    w2 = t[d * h + h : d * h + h + h * k].reshape(h, k)
    b2 = t[d * h + h + h * k :]
    return w1, b1, w2, b2


def softmax(z: np.ndarray) -> np.ndarray:
    """Row-wise softmax with max subtraction for stability."""
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(z: np.ndarray) -> np.ndarray:
    z = np.asarray(z, dtype=np.float64)
    shifted = z - z.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def _forward(params: ModelParams, inputs: np.ndarray):
    """Logits plus the intermediates backprop needs (None for linear)."""
    arch = params.arch
    if inputs.shape[1] != arch.n_features:
        raise ConfigError(
            f"inputs have {inputs.shape[1]} features, model expects {arch.n_features}"
        )
    if isinstance(arch, LinearSoftmax):
        (w,) = unpack(params)
        return inputs @ w, None
    w1, b1, w2, b2 = unpack(params)
    pre = inputs @ w1 + b1
    hidden = np.maximum(pre, 0.0)
    return hidden @ w2 + b2, (pre, hidden)


def forward_logits(params: ModelParams, inputs) -> np.ndarray:
    """Raw pre-softmax outputs, shape (n, n_classes)."""
    inputs = as_matrix(inputs, "inputs")
    logits, _ = _forward(params, inputs)
    check_finite(logits, "logits")
    return logits


def _grad_from_logit_grad(params: ModelParams, inputs, d_logits, cache) -> np.ndarray:
    """Backpropagate a gradient w.r.t. logits into the flat parameter vector."""
    arch = params.arch
    if isinstance(arch, LinearSoftmax):
        return (inputs.T @ d_logits).ravel()
    pre, hidden = cache
    w1, b1, w2, b2 = unpack(params)
    d_w2 = hidden.T @ d_logits
    d_b2 = d_logits.sum(axis=0)
    d_hidden = d_logits @ w2.T
    d_pre = d_hidden * (pre > 0.0)
    d_w1 = inputs.T @ d_pre
    d_b1 = d_pre.sum(axis=0)
    return np.concatenate([d_w1.ravel(), d_b1, d_w2.ravel(), d_b2])


def ce_loss_and_grad(params: ModelParams, batch: Batch) -> tuple[float, np.ndarray]:
    """Mean cross-entropy and its gradient w.r.t. the flat parameters.

    For the linear model the per-sample gradient is the outer product of
    the input with (softmax(z) - onehot(label)); the MLP gradient comes
    from backpropagation. Both reduce by the batch mean.
    """
    k = params.arch.n_classes
    if batch.labels.max() >= k:
        raise ConfigError(f"label {batch.labels.max()} out of range for {k} classes")
    logits, cache = _forward(params, batch.inputs)
    log_p = log_softmax(logits)
    n = len(batch)
    loss = -float(log_p[np.arange(n), batch.labels].mean())
    d_logits = np.exp(log_p)
    d_logits[np.arange(n), batch.labels] -= 1.0
    d_logits /= n
    grad = _grad_from_logit_grad(params, batch.inputs, d_logits, cache)
    return loss, grad


def soft_ce_loss_and_grad(
    params: ModelParams, inputs: np.ndarray, target_probs: np.ndarray
) -> tuple[float, np.ndarray]:
    """Cross-entropy against a fixed soft target distribution per row.

    loss = -mean_n sum_c target[n, c] * log softmax(z)[n, c], with the
    gradient flowing through the model logits only.
    """
    inputs = as_matrix(inputs, "inputs")
    target_probs = as_matrix(target_probs, "target probabilities")
    logits, cache = _forward(params, inputs)
    log_p = log_softmax(logits)
    n = inputs.shape[0]
    loss = -float((target_probs * log_p).sum(axis=1).mean())
    d_logits = (np.exp(log_p) - target_probs) / n
    grad = _grad_from_logit_grad(params, inputs, d_logits, cache)
    return loss, grad


def evaluate(params: ModelParams, test: Batch) -> tuple[float, float]:
    """(accuracy, mean CE loss); argmax ties resolve to the lowest class."""
    logits, _ = _forward(params, test.inputs)
    log_p = log_softmax(logits)
    n = len(test)
    preds = np.argmax(logits, axis=1)
    accuracy = float(np.mean(preds == test.labels))
    loss = -float(log_p[np.arange(n), test.labels].mean())
    return accuracy, loss
