"""Client-side local SGD and the server aggregation rules.

Three server rules plug into the event loop: buffered averaging (FedBuff),
buffered averaging followed by a distillation round on cached client
logits (FedEcho), and a server-side Adam baseline that treats the buffered
mean as a pseudo-gradient. All rules consume exactly one buffer of client
deltas per global round.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .distill import (
    DistillConfig,
    DistillRoundStats,
    LogitsCache,
    _AdamStep,
    distillation_round,
)
from .errors import ConfigError
from .linalg import check_finite
from .models import Batch, ModelParams, ce_loss_and_grad, forward_logits
from .rng import RngStream


@dataclass
class ClientUpdate:
    """What a client reports back: its parameter delta and when it left."""

    client_id: int
    delta: np.ndarray
    dispatch_round: int

    def __post_init__(self):
        self.delta = np.asarray(self.delta, dtype=np.float64).ravel()
        check_finite(self.delta, "client delta")


@dataclass(frozen=True)
class AlgoConfig:
    """Rates and local-work settings for one training run.

    Local work is given either in epochs over the client shard (the
    experimental convention) or as a fixed step count (the analysis
    convention); exactly one of the two must be set.
    """

    algorithm: str = "fedecho"  # fedbuff | adaptive
    eta_l: float = 0.05
    eta: float = 1.0
    local_epochs: int | None = 2
    local_steps: int | None = None
    local_batch: int = 32
    weight_decay: float = 0.0
    distill: DistillConfig | None = None
    adaptive_beta1: float = 0.9
    adaptive_beta2: float = 0.999
    adaptive_eps: float = 1e-8

    def __post_init__(self):
        if self.algorithm not in ("fedecho", "fedbuff", "adaptive"):
            raise ConfigError(f"unknown algorithm {self.algorithm!r}")
        if self.eta_l < 0 or self.eta < 0:
            raise ConfigError("learning rates must be non-negative")
        if (self.local_epochs is None) == (self.local_steps is None):
            raise ConfigError("set exactly one of local_epochs / local_steps")
        work = self.local_epochs if self.local_epochs is not None else self.local_steps
        if work < 1:
            raise ConfigError("local work must be >= 1")
        if self.local_batch < 1:
            raise ConfigError("local batch size must be >= 1")
        if self.weight_decay < 0:
            raise ConfigError("weight decay must be non-negative")
        if self.algorithm == "fedecho" and self.distill is None:
            object.__setattr__(self, "distill", DistillConfig())


def local_sgd(
    model_at_dispatch: ModelParams,
    shard: Batch,
    cfg: AlgoConfig,
    rng: RngStream,
    *,
    client_id: int = 0,
    dispatch_round: int = 0,
) -> ClientUpdate:
    """Mini-batch SGD with weight decay on a copy of the dispatched model.

    Batches are consecutive slices of a fresh permutation per epoch (or of
    repeated permutations in step mode). The dispatched model itself is
    never modified; the returned delta is final-minus-dispatched.
    """
    gen = rng.generator()
    theta0 = model_at_dispatch.theta
    # the delta is the accumulated object (a lone step reports exactly
    # -eta_l * grad); the working parameters are theta0 + delta
    delta = np.zeros_like(theta0)
    n = len(shard)
    batch = min(cfg.local_batch, n)

    def run_batch(rows: np.ndarray) -> None:
        nonlocal delta
        theta = theta0 + delta
        params = ModelParams(model_at_dispatch.arch, theta)
        _, grad = ce_loss_and_grad(params, Batch(shard.inputs[rows], shard.labels[rows]))
        if cfg.weight_decay:
            grad = grad + cfg.weight_decay * theta
        delta = delta - cfg.eta_l * grad

    if cfg.local_epochs is not None:
        for _ in range(cfg.local_epochs):
            perm = gen.permutation(n)
            for start in range(0, n, batch):
                run_batch(perm[start : start + batch])
    else:
        done = 0
        while done < cfg.local_steps:
            perm = gen.permutation(n)
            for start in range(0, n, batch):
                if done == cfg.local_steps:
                    break
                run_batch(perm[start : start + batch])
                done += 1

    return ClientUpdate(client_id, delta, dispatch_round)


def fedbuff_update(params: ModelParams, deltas: list[np.ndarray], eta: float) -> ModelParams:
    """x + eta * mean(deltas). No distillation."""
    if not deltas:
        raise ConfigError("buffer is empty")
    mean_delta = np.mean(np.stack(deltas), axis=0)
    return ModelParams(params.arch, params.theta + eta * mean_delta)


def fedecho_update(
    params: ModelParams,
    deltas: list[np.ndarray],
    eta: float,
    cache: LogitsCache,
    pool: np.ndarray,
    distill_cfg: DistillConfig,
    rng: RngStream,
) -> tuple[ModelParams, DistillRoundStats]:
    """Buffered averaging followed by one distillation round.

    With an empty cache the round is skipped and the result equals the
    plain buffered update.
    """
    averaged = fedbuff_update(params, deltas, eta)
    return distillation_round(averaged, pool, cache, distill_cfg, rng)


def adaptive_server_update(
    params: ModelParams, deltas: list[np.ndarray], adam: _AdamStep
) -> ModelParams:
    """Feed the buffered mean delta into a server-side Adam state."""
    if not deltas:
        raise ConfigError("buffer is empty")
    mean_delta = np.mean(np.stack(deltas), axis=0)
    return ModelParams(params.arch, params.theta + adam.step(mean_delta))


def cache_client_logits(
    checkpoint: ModelParams, update: ClientUpdate, cache: LogitsCache, pool: np.ndarray
) -> ModelParams:
    """Rebuild the client model from its dispatch checkpoint plus delta,
    run it over the pool, and store the raw logits in the client's slot."""
    reconstructed = ModelParams(checkpoint.arch, checkpoint.theta + update.delta)
    cache.store(update.client_id, forward_logits(reconstructed, pool))
    return reconstructed


class ServerRule:
    """Aggregation behavior the event loop invokes at arrivals and flushes."""

    uses_cache = False

    def on_update(self, update: ClientUpdate, reconstructed: ModelParams) -> None:
        pass

    def flush(
        self, params: ModelParams, deltas: list[np.ndarray], round_index: int
    ) -> tuple[ModelParams, DistillRoundStats | None]:
        raise NotImplementedError


class FedBuffRule(ServerRule):
    def __init__(self, eta: float):
        self.eta = eta

    def flush(self, params, deltas, round_index):
        return fedbuff_update(params, deltas, self.eta), None


class FedEchoRule(ServerRule):
    uses_cache = True

    def __init__(self, eta: float, distill_cfg: DistillConfig, pool: np.ndarray, rng: RngStream):
        self.eta = eta
        self.distill_cfg = distill_cfg
        self.pool = pool
        self.rng = rng
        self.cache = LogitsCache()

    def on_update(self, update, reconstructed):
        self.cache.store(update.client_id, forward_logits(reconstructed, self.pool))

    def flush(self, params, deltas, round_index):
        return fedecho_update(
            params,
            deltas,
            self.eta,
            self.cache,
            self.pool,
            self.distill_cfg,
            self.rng.substream(round_index),
        )


class AdaptiveRule(ServerRule):
    def __init__(self, eta: float, beta1: float, beta2: float, eps: float):
        self.eta = eta
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self._adam: _AdamStep | None = None

    def flush(self, params, deltas, round_index):
        if self._adam is None:
            self._adam = _AdamStep(self.eta, self.beta1, self.beta2, self.eps, params.theta.size)
        return adaptive_server_update(params, deltas, self._adam), None


def make_server_rule(cfg: AlgoConfig, pool: np.ndarray, distill_rng: RngStream) -> ServerRule:
    if cfg.algorithm == "fedbuff":
        return FedBuffRule(cfg.eta)
    if cfg.algorithm == "adaptive":
        return AdaptiveRule(cfg.eta, cfg.adaptive_beta1, cfg.adaptive_beta2, cfg.adaptive_eps)
    return FedEchoRule(cfg.eta, cfg.distill, pool, distill_rng)
