"""Seeded experiment execution and artifact writing.

One run directory holds, per seed, a metrics.csv (fixed column order,
floats at 17 significant digits so replays can be compared byte for byte)
and an events.csv arrival trace, plus one summary.json at the top with
aggregate accuracy, delay statistics, the config echo, and the recorded
modelling conventions.
"""
from __future__ import annotations

import csv
import itertools
import json
import os
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np

from . import __version__
from .algorithms import make_server_rule
from .config import RawConfig, RunConfig, build_config, read_raw, set_override
from .data import dirichlet_partition, generate, load_dataset, save_dataset
from .errors import ConfigError
from .models import (
    Batch,
    LinearSoftmax,
    Mlp,
    ModelParams,
    ce_loss_and_grad,
    evaluate,
    init_params,
)
from .rng import CATEGORIES as CATEGORIES_STREAM
from .rng import DISTILL_BATCHES, INIT, PARTITION, stream
from .simulator import AsyncFederation, EventRecord, assign_categories

SUMMARY_SCHEMA_VERSION = 1
OUTPUT_ROOT_ENV = "FEDECHO_OUTPUT_ROOT"

METRICS_COLUMNS = (
    "round",
    "clock_seconds",
    "test_accuracy",
    "test_loss",
    "train_grad_norm",
    "tau_max_so_far",
    "round_tau_max",
    "alpha_mean",
    "entropy_mean",
    "buffer_events",
    "checkpoints_retained",
)

EVENT_COLUMNS = ("event_index", "clock_seconds", "client_id", "tau", "buffer_fill", "round")

# choices the delay/distillation model leaves open; echoed into summary.json
CONVENTIONS = {
    "teacher_ensemble": "mean of raw logits over cached clients",
    "alpha": "recomputed per distillation batch from that batch's entropy",
    "dirichlet": "per-class proportion vector over clients",
    "gamma_map": "rank/noise blend with weight gamma/(1+gamma)",
    "logits_refresh": "only when a client delivers a new update",
    "distill_optimizer_state": "fresh per round",
}


@dataclass
class MetricsRecord:
    round: int
    clock_seconds: float
    test_accuracy: float
    test_loss: float
    train_grad_norm: float
    tau_max_so_far: int
    round_tau_max: int
    alpha_mean: float
    entropy_mean: float
    buffer_events: int
    checkpoints_retained: int


@dataclass
class RunResult:
    params: ModelParams
    records: list[MetricsRecord]
    events: list[EventRecord]
    tau_max: int
    tau_avg: float
    final_accuracy: float
    final_loss: float


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def train_federated(
    train: Batch,
    test: Batch,
    pool: np.ndarray,
    n_classes: int,
    cfg: RunConfig,
    seed: int,
) -> RunResult:
    """Run one seeded federation over already-materialized data."""
    d = train.inputs.shape[1]
    if cfg.arch == "mlp":
        arch = Mlp(d, cfg.hidden, n_classes)
    else:
        arch = LinearSoftmax(d, n_classes)

    shard_indices = dirichlet_partition(
        train.labels, cfg.n_clients, cfg.alpha_dir, stream(seed, PARTITION)
    )
    shards = [Batch(train.inputs[idx], train.labels[idx]) for idx in shard_indices]
    categories = assign_categories(
        [len(s) for s in shards], cfg.delay, stream(seed, CATEGORIES_STREAM)
    )
    params0 = init_params(arch, stream(seed, INIT))
    rule = make_server_rule(cfg.algo, pool, stream(seed, DISTILL_BATCHES))

    records: list[MetricsRecord] = []

    def on_round(sim: AsyncFederation) -> None:
        r = sim.round
        if r % cfg.eval_every != 0 and r != cfg.rounds:
            return
        accuracy, loss = evaluate(sim.params, test)
        _, grad = ce_loss_and_grad(sim.params, train)
        tau_max, _ = sim.delay_stats()
        stats = sim.round_stats[-1]
        dstats = stats.distill
        records.append(
            MetricsRecord(
                round=r,
                clock_seconds=sim.clock,
                test_accuracy=accuracy,
                test_loss=loss,
                train_grad_norm=float(np.linalg.norm(grad)),
                tau_max_so_far=tau_max,
                round_tau_max=stats.tau_max,
                alpha_mean=dstats.alpha_mean if dstats else float("nan"),
                entropy_mean=dstats.entropy_mean if dstats else float("nan"),
                buffer_events=sim.total_events + 1,
                checkpoints_retained=len(sim.checkpoints),
            )
        )

    sim = AsyncFederation(
        params=params0,
        shards=shards,
        rule=rule,
        algo_cfg=cfg.algo,
        concurrency=cfg.concurrency,
        buffer_size=cfg.buffer_size,
        categories=categories,
        profile=cfg.delay,
        seed=seed,
        runtime_mode=cfg.runtime_mode,
        on_round_complete=on_round,
    )
    sim.run(max_rounds=cfg.rounds)

    tau_max, tau_avg = sim.delay_stats()
    final_accuracy, final_loss = evaluate(sim.params, test)
    return RunResult(
        params=sim.params,
        records=records,
        events=sim.events,
        tau_max=tau_max,
        tau_avg=tau_avg,
        final_accuracy=final_accuracy,
        final_loss=final_loss,
    )


def _write_metrics(path: Path, records: list[MetricsRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(METRICS_COLUMNS)
        for rec in records:
            row = asdict(rec)
            writer.writerow([_fmt(row[col]) for col in METRICS_COLUMNS])


def _write_events(path: Path, events: list[EventRecord]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_COLUMNS)
        for ev in events:
            writer.writerow(
                [
                    ev.index,
                    _fmt(ev.clock),
                    ev.client_id,
                    ev.tau,
                    ev.fill_after,
                    ev.round_index,
                ]
            )


def resolve_output_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.output_dir)
    root = os.environ.get(OUTPUT_ROOT_ENV)
    if root and not out.is_absolute():
        out = Path(root) / out
    return out


def _materialize_data(cfg: RunConfig):
    if cfg.dataset_file is not None:
        return load_dataset(cfg.dataset_file)
    if cfg.dataset is None:
        raise ConfigError("dataset: provide generation settings or a file")
    train, test, pool = generate(cfg.dataset)
    return train, test, pool, cfg.dataset.n_classes


def execute_run(cfg: RunConfig, raw_echo: RawConfig | None = None) -> dict:
    """Run every configured seed and write the artifact files.

    Returns the summary dict (also written to summary.json).
    """
    out_dir = resolve_output_dir(cfg)
    out_dir.mkdir(parents=True, exist_ok=True)
    train, test, pool, n_classes = _materialize_data(cfg)
    if cfg.save_dataset:
        save_dataset(out_dir / "dataset.bin", train, test, pool, n_classes)

    per_seed = []
    for seed in cfg.seeds:
        result = train_federated(train, test, pool, n_classes, cfg, seed)
        seed_dir = out_dir / f"seed-{seed}"
        seed_dir.mkdir(parents=True, exist_ok=True)
        _write_metrics(seed_dir / "metrics.csv", result.records)
        _write_events(seed_dir / "events.csv", result.events)
        per_seed.append(
            {
                "seed": seed,
                "final_accuracy": result.final_accuracy,
                "final_loss": result.final_loss,
                "tau_max": result.tau_max,
                "tau_avg": result.tau_avg,
            }
        )

    accs = np.array([s["final_accuracy"] for s in per_seed])
    summary = {
        "schema_version": SUMMARY_SCHEMA_VERSION,
        "package_version": __version__,
        "algorithm": cfg.algo.algorithm,
        "seeds": list(cfg.seeds),
        "accuracy_mean": float(accs.mean()),
        "accuracy_std": float(accs.std(ddof=0)),
        "tau_max": max(s["tau_max"] for s in per_seed),
        "per_seed": per_seed,
        "conventions": dict(CONVENTIONS, runtime_mode=cfg.runtime_mode),
        "config": raw_echo if raw_echo is not None else {},
    }
    with open(out_dir / "summary.json", "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return summary


def parse_grid(spec: str) -> tuple[str, list[str]]:
    """'section.key=v1,v2' -> (dotted key, value list)."""
    if "=" not in spec:
        raise ConfigError(f"grid must look like section.key=v1,v2 got {spec!r}")
    key, values = spec.split("=", 1)
    vals = [v.strip() for v in values.split(",") if v.strip()]
    if not vals:
        raise ConfigError(f"grid for {key!r} has no values")
    return key.strip(), vals


def run_sweep(raw: RawConfig, grids: list[str], sweep_dir) -> Path:
    """Cross-product of grid overrides; one run directory per combination
    plus an aggregate.csv keyed by the override tuple."""
    sweep_dir = Path(sweep_dir)
    sweep_dir.mkdir(parents=True, exist_ok=True)
    parsed = [parse_grid(g) for g in grids]
    keys = [k for k, _ in parsed]
    for key in keys:  # fail fast on unknown keys before any run starts
        set_override(raw, key, "0")
    value_lists = [vals for _, vals in parsed]
    combos = list(itertools.product(*value_lists)) if parsed else [()]

    rows = []
    for combo in combos:
        raw_combo = raw
        for key, value in zip(keys, combo):
            raw_combo = set_override(raw_combo, key, value)
        name = "__".join(f"{k.split('.', 1)[1]}={v}" for k, v in zip(keys, combo)) or "base"
        name = name.replace("/", "_")
        cfg = replace(build_config(raw_combo), output_dir=str(sweep_dir / name))
        summary = execute_run(cfg, raw_echo=raw_combo)
        rows.append(
            {
                **{k: v for k, v in zip(keys, combo)},
                "run_dir": name,
                "accuracy_mean": summary["accuracy_mean"],
                "accuracy_std": summary["accuracy_std"],
                "tau_max": summary["tau_max"],
            }
        )

    columns = [*keys, "run_dir", "accuracy_mean", "accuracy_std", "tau_max"]
    with open(sweep_dir / "aggregate.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])
    return sweep_dir
