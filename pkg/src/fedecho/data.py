"""Synthetic labeled datasets, non-IID client splits, and a binary format.

Datasets stand in for the image/text corpora of full-scale federated runs:
a Gaussian mixture (one cluster per class) and the two-spirals task. The
unlabeled pool for server distillation is drawn from the same input
distribution with labels discarded, or optionally from a shifted mixture
to emulate out-of-distribution pools.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError
from .models import Batch
from .rng import DATA, RngStream, stream

_MAGIC = b"FEDD"
_VERSION = 1

KINDS = ("gaussian_mixture", "two_spirals")
UNLABELED_MODES = ("matched", "shifted")


@dataclass(frozen=True)
class DatasetSpec:
    kind: str = "gaussian_mixture"
    n_classes: int = 10
    n_features: int = 20
    spread: float = 0.6
    n_train: int = 5000
    n_test: int = 1000
    n_unlabeled: int = 2000
    unlabeled_mode: str = "matched"
    seed: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigError(f"unknown dataset kind {self.kind!r}")
        if self.kind == "two_spirals" and (self.n_classes != 2 or self.n_features != 2):
            raise ConfigError("two_spirals is a 2-class, 2-feature task")
        if self.n_classes < 2:
            raise ConfigError("need at least 2 classes")
        if min(self.n_train, self.n_test, self.n_unlabeled) < 1:
            raise ConfigError("all sample counts must be >= 1")
        if self.spread < 0:
            raise ConfigError("spread must be non-negative")
        if self.unlabeled_mode not in UNLABELED_MODES:
            raise ConfigError(f"unknown unlabeled mode {self.unlabeled_mode!r}")


def _balanced_labels(n: int, k: int, gen) -> np.ndarray:
    labels = np.arange(n, dtype=np.int64) % k
    return gen.permutation(labels)


def _mixture_points(labels: np.ndarray, means: np.ndarray, spread: float, gen) -> np.ndarray:
    noise = gen.standard_normal((labels.size, means.shape[1]))
    return means[labels] + spread * noise


def _spiral_points(labels: np.ndarray, spread: float, gen) -> np.ndarray:
    t = gen.uniform(0.25, 3.0, labels.size) * np.pi
    phase = labels * np.pi
    x = np.stack([t * np.cos(t + phase), t * np.sin(t + phase)], axis=1)
    return x + spread * gen.standard_normal(x.shape)


def generate(spec: DatasetSpec) -> tuple[Batch, Batch, np.ndarray]:
    """(train, test, unlabeled pool), fully reproducible from spec.seed."""
    gen = stream(spec.seed, DATA).generator()
    k = spec.n_classes

    if spec.kind == "gaussian_mixture":
        means = gen.uniform(-2.0, 2.0, (k, spec.n_features))

        def sample(n: int, centers: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
            labels = _balanced_labels(n, k, gen)
            return _mixture_points(labels, centers, spec.spread, gen), labels

        train_x, train_y = sample(spec.n_train, means)
        test_x, test_y = sample(spec.n_test, means)
        if spec.unlabeled_mode == "shifted":
            # offset every cluster mean by one noise-scale unit in a random
            # direction to emulate a distribution-mismatched pool
            directions = gen.standard_normal(means.shape)
            directions /= np.linalg.norm(directions, axis=1, keepdims=True)
            pool_means = means + spec.spread * directions
        else:
            pool_means = means
        pool_x, _ = sample(spec.n_unlabeled, pool_means)
    else:
        def sample_spiral(n: int) -> tuple[np.ndarray, np.ndarray]:
            labels = _balanced_labels(n, 2, gen)
            return _spiral_points(labels, spec.spread, gen), labels

        train_x, train_y = sample_spiral(spec.n_train)
        test_x, test_y = sample_spiral(spec.n_test)
        pool_x, _ = sample_spiral(spec.n_unlabeled)

    return Batch(train_x, train_y), Batch(test_x, test_y), np.ascontiguousarray(pool_x)


def dirichlet_partition(
    labels: np.ndarray, n_clients: int, alpha_dir: float, rng: RngStream
) -> list[np.ndarray]:
    """Split sample indices across clients with per-class Dirichlet shares.

    For each class, a proportion vector drawn from Dir(alpha_dir * 1) cuts
    that class's (shuffled) samples into client chunks. Clients that end
    up empty are repaired by taking one sample from the largest client.
    The split depends only on the labels, never on feature values.
    """
    labels = np.asarray(labels, dtype=np.int64).ravel()
    if n_clients < 1:
        raise ConfigError("need at least one client")
    if alpha_dir <= 0:
        raise ConfigError(f"Dirichlet concentration must be positive, got {alpha_dir}")
    if labels.size < n_clients:
        raise ConfigError(
            f"cannot split {labels.size} samples across {n_clients} clients"
        )

    gen = rng.generator()
    parts: list[list[int]] = [[] for _ in range(n_clients)]
    for cls in np.unique(labels):
        idx = np.flatnonzero(labels == cls)
        gen.shuffle(idx)
        shares = gen.dirichlet(np.full(n_clients, alpha_dir))
        cuts = (np.cumsum(shares)[:-1] * idx.size).astype(np.int64)
        for client, chunk in enumerate(np.split(idx, cuts)):
            parts[client].extend(chunk.tolist())

    sizes = np.array([len(p) for p in parts])
    while (sizes == 0).any():
        taker = int(np.argmin(sizes))
        donor = int(np.argmax(sizes))
        parts[taker].append(parts[donor].pop())
        sizes[taker] += 1
        sizes[donor] -= 1

    return [np.array(sorted(p), dtype=np.int64) for p in parts]


def save_dataset(path, train: Batch, test: Batch, unlabeled: np.ndarray, n_classes: int) -> None:
    """Write the little-endian flat binary form (magic, version, shapes,
    float64 features, uint32 labels)."""
    unlabeled = np.ascontiguousarray(unlabeled, dtype=np.float64)
    d = train.inputs.shape[1]
    header = struct.pack(
        "<4sIIIIII",
        _MAGIC,
        _VERSION,
        d,
        n_classes,
        len(train),
        len(test),
        unlabeled.shape[0],
    )
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(train.inputs.astype("<f8").tobytes())
        fh.write(train.labels.astype("<u4").tobytes())
        fh.write(test.inputs.astype("<f8").tobytes())
        fh.write(test.labels.astype("<u4").tobytes())
        fh.write(unlabeled.astype("<f8").tobytes())


def load_dataset(path) -> tuple[Batch, Batch, np.ndarray, int]:
    with open(path, "rb") as fh:
        raw = fh.read()
    head_size = struct.calcsize("<4sIIIIII")
    magic, version, d, k, n_train, n_test, n_unlabeled = struct.unpack(
        "<4sIIIIII", raw[:head_size]
    )
    if magic != _MAGIC:
        raise ConfigError(f"not a dataset file (magic {magic!r})")
    if version != _VERSION:
        raise ConfigError(f"unsupported dataset file version {version}")

    offset = head_size

    def take(count: int, dtype: str) -> np.ndarray:
        nonlocal offset
        arr = np.frombuffer(raw, dtype=dtype, count=count, offset=offset)
        offset += arr.nbytes
        return arr

    train_x = take(n_train * d, "<f8").reshape(n_train, d)
    train_y = take(n_train, "<u4").astype(np.int64)
    test_x = take(n_test * d, "<f8").reshape(n_test, d)
    test_y = take(n_test, "<u4").astype(np.int64)
    pool = take(n_unlabeled * d, "<f8").reshape(n_unlabeled, d)
    if offset != len(raw):
        raise ConfigError("dataset file has trailing bytes")
    return Batch(train_x, train_y), Batch(test_x, test_y), pool.copy(), int(k)
