"""Deterministic discrete-event engine for buffered asynchronous federation.

Clients are assigned runtime categories (short/medium/long) from their
sample counts, a fixed number of them train concurrently, and the server
processes arrivals in finish-time order. Every arrival is aggregated
against the checkpoint it was dispatched from; once the buffer holds the
configured number of updates the server rule performs a global round.

Conventions that pin determinism and staleness accounting:
  - ties in finish time are processed in ascending client id;
  - all tasks finishing at the same instant are absorbed (including any
    global round they trigger) before their replacement clients are
    dispatched, so replacements always start from the newest model at
    that instant and a fully synchronous run shows zero delay;
  - runtimes, local batch orders, and scheduler picks come from separate
    named streams keyed per client and dispatch, so draws never depend on
    event interleaving.
"""
from __future__ import annotations

import heapq
import math
from dataclasses import dataclass

import numpy as np

from .algorithms import AlgoConfig, ClientUpdate, ServerRule, local_sgd
from .distill import DistillRoundStats
from .errors import ConfigError, NumericalError
from .models import Batch, ModelParams
from .rng import LOCAL_BATCHES, RUNTIMES, SCHEDULER, RngStream, draw_uniform, stream

CATEGORIES = ("short", "medium", "long")
TIME_UNIT_SECONDS = 10.0
# share of clients in the middle runtime tier; the long tier is capped by
# the profile, everyone else is short
MEDIUM_FRACTION = 0.3


@dataclass(frozen=True)
class DelayProfile:
    """Per-category runtime ranges in table units of 10 simulated seconds."""

    short: tuple[float, float] = (1.0, 2.0)
    medium: tuple[float, float] = (3.0, 5.0)
    long: tuple[float, float] = (50.0, 80.0)
    gamma: float = 0.5
    max_long_fraction: float = 0.10

    def __post_init__(self):
        for name in CATEGORIES:
            lo, hi = getattr(self, name)
            if lo > hi or lo < 0:
                raise ConfigError(f"bad {name} runtime range ({lo}, {hi})")
        if self.gamma < 0:
            raise ConfigError("gamma must be non-negative")
        if not 0.0 < self.max_long_fraction <= 1.0:
            raise ConfigError("max_long_fraction must lie in (0, 1]")


LARGE_DELAY = DelayProfile()
MILD_DELAY = DelayProfile(long=(10.0, 20.0))


def assign_categories(sample_counts, profile: DelayProfile, rng: RngStream) -> list[str]:
    """Assign each client a runtime category from its sample count.

    Clients are ranked by sample count and blended with uniform noise:
    gamma -> 0 makes the tiers a pure function of the ranking (biggest
    clients are slowest), gamma -> inf makes them uniformly random. At
    most max_long_fraction of the clients land in the long tier.
    """
    counts = np.asarray(sample_counts, dtype=np.int64)
    if counts.size < 1 or counts.min() < 1:
        raise ConfigError("every client needs at least one sample")
    n = counts.size
    gen = rng.generator()
    noise = gen.random(n)
    order = np.argsort(-counts, kind="stable")
    ranks = np.empty(n)
    ranks[order] = np.arange(n)
    rank_score = ranks / max(n - 1, 1)
    w = 1.0 if math.isinf(profile.gamma) else profile.gamma / (1.0 + profile.gamma)
    score = (1.0 - w) * rank_score + w * noise

    tier_order = np.argsort(score, kind="stable")
    n_long = int(math.floor(profile.max_long_fraction * n))
    n_medium = int(math.floor(MEDIUM_FRACTION * n))
    cats = ["short"] * n
    for pos, client in enumerate(tier_order):
        if pos < n_long:
            cats[client] = "long"
        elif pos < n_long + n_medium:
            cats[client] = "medium"
    return cats


def sample_runtime(category: str, profile: DelayProfile, rng) -> float:
    """One runtime draw in simulated seconds for the given category."""
    if category not in CATEGORIES:
        raise ConfigError(f"unknown runtime category {category!r}")
    lo, hi = getattr(profile, category)
    return draw_uniform(rng, lo, hi) * TIME_UNIT_SECONDS


@dataclass
class PendingTask:
    """An in-flight client training job."""

    client_id: int
    dispatch_round: int
    finish_time: float
    dispatch_index: int
    dispatch_theta: np.ndarray  # snapshot for the reconstruction check


@dataclass
class EventRecord:
    """One processed arrival, as written to the event trace."""

    index: int
    clock: float
    client_id: int
    tau: int
    fill_after: int
    round_index: int


@dataclass
class RoundStats:
    tau_max: int
    distill: DistillRoundStats | None


class AsyncFederation:
    """The event loop tying clients, delays, and a server rule together."""

    def __init__(
        self,
        *,
        params: ModelParams,
        shards: list[Batch],
        rule: ServerRule,
        algo_cfg: AlgoConfig,
        concurrency: int,
        buffer_size: int,
        categories: list[str],
        profile: DelayProfile,
        seed: int,
        runtime_mode: str = "resample",
        on_round_complete=None,
    ):
        n = len(shards)
        if not 1 <= buffer_size <= concurrency <= n:
            raise ConfigError(
                f"need 1 <= buffer {buffer_size} <= concurrency {concurrency} <= clients {n}"
            )
        if len(categories) != n:
            raise ConfigError("one category per client required")
        if runtime_mode not in ("resample", "fixed"):
            raise ConfigError(f"unknown runtime mode {runtime_mode!r}")

        self.n_clients = n
        self.shards = shards
        self.rule = rule
        self.algo_cfg = algo_cfg
        self.concurrency = concurrency
        self.buffer_size = buffer_size
        self.categories = categories
        self.profile = profile
        self.runtime_mode = runtime_mode
        self.on_round_complete = on_round_complete

        self.params = params
        self.round = 0
        self.clock = 0.0
        self.total_events = 0
        self.events: list[EventRecord] = []
        self.round_stats: list[RoundStats] = []
        self.checkpoints: dict[int, ModelParams] = {0: params}

        self._heap: list[tuple[float, int, PendingTask]] = []
        self._active: set[int] = set()
        self._deltas: list[np.ndarray] = []
        self._window_taus: list[int] = []
        self._tau_max = 0
        self._dispatch_counts = np.zeros(n, dtype=np.int64)
        self._fixed_runtimes: dict[int, float] = {}

        self._runtimes = stream(seed, RUNTIMES)
        self._local = stream(seed, LOCAL_BATCHES)
        self._scheduler = stream(seed, SCHEDULER).generator()

        first = np.sort(self._scheduler.choice(n, size=concurrency, replace=False))
        for client in first:
            self._dispatch(int(client))
        self._check_invariants()

    # -- dispatch / runtime ------------------------------------------------

    def _runtime_for(self, client: int, dispatch_index: int) -> float:
        if self.runtime_mode == "fixed":
            if client not in self._fixed_runtimes:
                self._fixed_runtimes[client] = sample_runtime(
                    self.categories[client], self.profile, self._runtimes.substream(client, 0)
                )
            return self._fixed_runtimes[client]
        return sample_runtime(
            self.categories[client],
            self.profile,
            self._runtimes.substream(client, dispatch_index),
        )

    def _dispatch(self, client: int) -> None:
        idx = int(self._dispatch_counts[client])
        self._dispatch_counts[client] += 1
        task = PendingTask(
            client_id=client,
            dispatch_round=self.round,
            finish_time=self.clock + self._runtime_for(client, idx),
            dispatch_index=idx,
            dispatch_theta=self.params.theta.copy(),
        )
        heapq.heappush(self._heap, (task.finish_time, client, task))
        self._active.add(client)

    # -- event processing ----------------------------------------------------

    def _train(self, task: PendingTask) -> ClientUpdate:
        checkpoint = self.checkpoints.get(task.dispatch_round)
        if checkpoint is None:
            raise RuntimeError(
                f"checkpoint {task.dispatch_round} was collected while still referenced"
            )
        return local_sgd(
            checkpoint,
            self.shards[task.client_id],
            self.algo_cfg,
            self._local.substream(task.client_id, task.dispatch_index),
            client_id=task.client_id,
            dispatch_round=task.dispatch_round,
        )

    def _reconstruct(self, task: PendingTask, update: ClientUpdate) -> ModelParams:
        checkpoint = self.checkpoints.get(update.dispatch_round)
        if checkpoint is None:
            raise RuntimeError(
                f"checkpoint {update.dispatch_round} was collected while still referenced"
            )
        reconstructed = ModelParams(self.params.arch, checkpoint.theta + update.delta)
        expected = task.dispatch_theta + update.delta
        if not np.array_equal(reconstructed.theta, expected):
            raise RuntimeError(
                f"reconstruction mismatch for client {task.client_id} at round {self.round}"
            )
        return reconstructed

    def _flush(self) -> None:
        try:
            new_params, dstats = self.rule.flush(self.params, self._deltas, self.round)
        except NumericalError as exc:
            raise NumericalError(f"{exc} (global round {self.round + 1})") from exc
        if not np.all(np.isfinite(new_params.theta)):
            raise NumericalError(f"non-finite model parameters after round {self.round + 1}")
        self.params = new_params
        self.round += 1
        self.checkpoints[self.round] = new_params
        self.round_stats.append(RoundStats(tau_max=max(self._window_taus), distill=dstats))
        self._deltas = []
        self._window_taus = []
        if self.on_round_complete is not None:
            self.on_round_complete(self)

    def step(self) -> list[EventRecord] | None:
        """Process every task finishing at the earliest instant.

        Returns the arrival records, or None when the queue is empty.
        """
        if not self._heap:
            return None
        instant = self._heap[0][0]
        batch: list[PendingTask] = []
        while self._heap and self._heap[0][0] == instant:
            batch.append(heapq.heappop(self._heap)[2])
        self.clock = instant

        records: list[EventRecord] = []
        for task in batch:
            self._active.discard(task.client_id)
            update = self._train(task)
            tau = self.round - task.dispatch_round
            reconstructed = self._reconstruct(task, update)
            self.rule.on_update(update, reconstructed)
            self._deltas.append(update.delta)
            self._window_taus.append(tau)
            self._tau_max = max(self._tau_max, tau)
            flushed = len(self._deltas) == self.buffer_size
            if flushed:
                self._flush()
            record = EventRecord(
                index=self.total_events,
                clock=self.clock,
                client_id=task.client_id,
                tau=tau,
                fill_after=0 if flushed else len(self._deltas),
                round_index=self.round,
            )
            self.total_events += 1
            records.append(record)
            self.events.append(record)

        for _ in batch:
            idle = sorted(set(range(self.n_clients)) - self._active)
            pick = idle[int(self._scheduler.integers(len(idle)))]
            self._dispatch(pick)

        self._gc_checkpoints()
        self._check_invariants()
        return records

    def run(self, max_rounds: int | None = None, max_events: int | None = None) -> None:
        if max_rounds is None and max_events is None:
            raise ConfigError("run needs max_rounds and/or max_events")
        while True:
            if max_rounds is not None and self.round >= max_rounds:
                return
            if max_events is not None and self.total_events >= max_events:
                return
            if self.step() is None:
                return

    # -- bookkeeping ---------------------------------------------------------

    def _gc_checkpoints(self) -> None:
        referenced = {task.dispatch_round for _, _, task in self._heap}
        referenced.add(self.round)
        for version in [v for v in self.checkpoints if v not in referenced]:
            del self.checkpoints[version]

    def _check_invariants(self) -> None:
        if len(self._active) != self.concurrency:
            raise RuntimeError(
                f"{len(self._active)} active clients, expected {self.concurrency}"
            )
        if not 0 <= len(self._deltas) < self.buffer_size:
            raise RuntimeError(f"buffer fill {len(self._deltas)} out of range")
        if len(self.checkpoints) > self.concurrency + 1:
            raise RuntimeError(
                f"{len(self.checkpoints)} checkpoints retained, "
                f"bound is {self.concurrency + 1}"
            )

    def pending_tasks(self) -> list[PendingTask]:
        return [task for _, _, task in sorted(self._heap)]

    def delay_stats(self) -> tuple[int, float]:
        """(worst delay over all arrivals, mean over rounds of the round's
        worst delay). Needs at least one completed round."""
        if not self.round_stats:
            raise ConfigError("no completed rounds yet")
        tau_avg = float(np.mean([rs.tau_max for rs in self.round_stats]))
        return self._tau_max, tau_avg
