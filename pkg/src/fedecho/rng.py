"""Deterministic, splittable random streams.

All randomness in a run derives from one root seed fanned out into named
streams (data, partition, init, runtimes, scheduler, local batches,
distillation batches, categories). Streams are keyed substreams of the
counter-based Philox generator, so draws consumed by one component never
shift the draws seen by another, and event ordering cannot perturb them.
"""
from __future__ import annotations

import numpy as np

from .errors import ConfigError

# Top-level stream ids. Append new ids, never renumber: renumbering breaks
# replay of existing configs.
DATA = 0
PARTITION = 1
INIT = 2
RUNTIMES = 3
SCHEDULER = 4
LOCAL_BATCHES = 5
DISTILL_BATCHES = 6
CATEGORIES = 7


class RngStream:
    """A named, replayable random stream.

    Two streams built from the same ``(seed, key)`` produce identical draw
    sequences on every platform; streams with different keys are
    statistically independent. ``substream`` derives child streams without
    consuming any state, so a component can hand out per-client or
    per-round streams deterministically.
    """

    __slots__ = ("seed", "key", "_gen")

    def __init__(self, seed: int, key: tuple[int, ...] = ()):
        if seed < 0:
            raise ConfigError(f"seed must be non-negative, got {seed}")
        self.seed = int(seed)
        self.key = tuple(int(k) for k in key)
        self._gen: np.random.Generator | None = None

    def substream(self, *ids: int) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(ids))

    def generator(self) -> np.random.Generator:
        """The stream's stateful generator (created on first use)."""
        if self._gen is None:
            seq = np.random.SeedSequence(self.seed, spawn_key=self.key)
            self._gen = np.random.Generator(np.random.Philox(seq))
        return self._gen

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, key={self.key})"


def stream(seed: int, stream_id: int) -> RngStream:
    """Top-level named stream of a root seed."""
    return RngStream(seed, (stream_id,))


def draw_uniform(rng: RngStream | np.random.Generator, lo: float, hi: float) -> float:
    """One uniform draw from [lo, hi).

    The degenerate interval lo == hi returns lo without consuming state.
    """
    if lo > hi:
        raise ConfigError(f"uniform interval is empty: lo={lo} > hi={hi}")
    if lo == hi:
        return float(lo)
    gen = rng.generator() if isinstance(rng, RngStream) else rng
    return float(gen.uniform(lo, hi))
