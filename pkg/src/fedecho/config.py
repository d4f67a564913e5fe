"""Run configuration: flat key = value sections, strictly validated.

The file format is INI-style and human-diffable so sweeps can override
individual keys. Every key is checked against the schema and every value
parsed with a field-level error message; unknown keys are rejected (which
also gives the sweep command its key validation).
"""
from __future__ import annotations

import configparser
import copy
import math
from dataclasses import dataclass

from .algorithms import AlgoConfig
from .data import DatasetSpec
from .distill import DistillConfig
from .errors import ConfigError
from .simulator import LARGE_DELAY, MILD_DELAY, DelayProfile

_SCHEMA: dict[str, tuple[str, ...]] = {
    "dataset": (
        "kind", "classes", "features", "spread", "n_train", "n_test",
        "n_unlabeled", "unlabeled_mode", "seed", "file",
    ),
    "model": ("arch", "hidden"),
    "federation": ("clients", "concurrency", "buffer", "rounds", "alpha_dir"),
    "local": ("eta_l", "epochs", "steps", "batch", "weight_decay"),
    "server": ("algorithm", "eta", "adaptive_beta1", "adaptive_beta2", "adaptive_eps"),
    "distill": (
        "eta_d", "optimizer", "alpha", "alpha_min", "alpha_max", "nu",
        "batch", "steps", "beta1", "beta2", "eps",
    ),
    "delay": (
        "profile", "gamma", "max_long_fraction", "runtime_mode",
        "short", "medium", "long",
    ),
    "run": ("seeds", "eval_every", "output_dir", "save_dataset"),
}

RawConfig = dict[str, dict[str, str]]


@dataclass(frozen=True)
class RunConfig:
    """Everything one training run needs, plus output settings."""

    dataset: DatasetSpec | None
    dataset_file: str | None
    arch: str
    hidden: int
    n_clients: int
    concurrency: int
    buffer_size: int
    rounds: int
    alpha_dir: float
    algo: AlgoConfig
    delay: DelayProfile
    runtime_mode: str
    seeds: tuple[int, ...]
    eval_every: int
    output_dir: str
    save_dataset: bool

    def __post_init__(self):
        if not 1 <= self.buffer_size <= self.concurrency <= self.n_clients:
            raise ConfigError(
                "federation: need buffer <= concurrency <= clients, got "
                f"{self.buffer_size} / {self.concurrency} / {self.n_clients}"
            )
        if self.rounds < 1:
            raise ConfigError("federation.rounds: must be >= 1")
        if self.alpha_dir <= 0:
            raise ConfigError("federation.alpha_dir: must be positive")
        if self.arch not in ("linear", "mlp"):
            raise ConfigError(f"model.arch: unknown architecture {self.arch!r}")
        if self.hidden < 1:
            raise ConfigError("model.hidden: must be >= 1")
        if self.runtime_mode not in ("resample", "fixed"):
            raise ConfigError(f"delay.runtime_mode: unknown mode {self.runtime_mode!r}")
        if not self.seeds:
            raise ConfigError("run.seeds: need at least one seed")
        if self.eval_every < 1:
            raise ConfigError("run.eval_every: must be >= 1")


def _parse_float(section: str, key: str, text: str) -> float:
    text = text.strip().lower()
    if text in ("inf", "infinity"):
        return math.inf
    try:
        return float(text)
    except ValueError:
        raise ConfigError(f"{section}.{key}: not a number: {text!r}") from None


def _parse_int(section: str, key: str, text: str) -> int:
    try:
        return int(text.strip())
    except ValueError:
        raise ConfigError(f"{section}.{key}: not an integer: {text!r}") from None


def _parse_bool(section: str, key: str, text: str) -> bool:
    val = text.strip().lower()
    if val in ("1", "true", "yes", "on"):
        return True
    if val in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"{section}.{key}: not a boolean: {text!r}")


def _parse_pair(section: str, key: str, text: str) -> tuple[float, float]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if len(parts) != 2:
        raise ConfigError(f"{section}.{key}: expected two numbers, got {text!r}")
    return _parse_float(section, key, parts[0]), _parse_float(section, key, parts[1])


def _parse_seeds(text: str) -> tuple[int, ...]:
    parts = [p for p in text.replace(",", " ").split() if p]
    if not parts:
        raise ConfigError("run.seeds: need at least one seed")
    return tuple(_parse_int("run", "seeds", p) for p in parts)


def read_raw(path) -> RawConfig:
    parser = configparser.ConfigParser()
    try:
        with open(path, "r", encoding="utf-8") as fh:
            parser.read_file(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config: {exc}") from None
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return {section: dict(parser.items(section)) for section in parser.sections()}


def parse_raw(text: str) -> RawConfig:
    parser = configparser.ConfigParser()
    try:
        parser.read_string(text)
    except configparser.Error as exc:
        raise ConfigError(f"malformed config: {exc}") from None
    return {section: dict(parser.items(section)) for section in parser.sections()}


def set_override(raw: RawConfig, dotted_key: str, value: str) -> RawConfig:
    """Return a copy of raw with section.key set; the key must exist in
    the schema (this backs the sweep command's key validation)."""
    if "." not in dotted_key:
        raise ConfigError(f"override key must look like section.key, got {dotted_key!r}")
    section, key = dotted_key.split(".", 1)
    if section not in _SCHEMA or key not in _SCHEMA[section]:
        raise ConfigError(f"unknown config key {dotted_key!r}")
    out = copy.deepcopy(raw)
    out.setdefault(section, {})[key] = value
    return out


def build_config(raw: RawConfig) -> RunConfig:
    """Validate a raw section/key mapping and build the RunConfig."""
    for section, keys in raw.items():
        if section not in _SCHEMA:
            raise ConfigError(f"unknown config section [{section}]")
        for key in keys:
            if key not in _SCHEMA[section]:
                raise ConfigError(f"unknown config key {section}.{key}")

    def get(section: str, key: str, default: str | None = None) -> str | None:
        return raw.get(section, {}).get(key, default)

    # dataset
    dataset_file = get("dataset", "file")
    dataset = None
    if dataset_file is None:
        dataset = DatasetSpec(
            kind=get("dataset", "kind", "gaussian_mixture"),
            n_classes=_parse_int("dataset", "classes", get("dataset", "classes", "10")),
            n_features=_parse_int("dataset", "features", get("dataset", "features", "20")),
            spread=_parse_float("dataset", "spread", get("dataset", "spread", "0.6")),
            n_train=_parse_int("dataset", "n_train", get("dataset", "n_train", "5000")),
            n_test=_parse_int("dataset", "n_test", get("dataset", "n_test", "1000")),
            n_unlabeled=_parse_int(
                "dataset", "n_unlabeled", get("dataset", "n_unlabeled", "2000")
            ),
            unlabeled_mode=get("dataset", "unlabeled_mode", "matched"),
            seed=_parse_int("dataset", "seed", get("dataset", "seed", "0")),
        )

    # local work: epochs and steps are mutually exclusive
    epochs_text = get("local", "epochs")
    steps_text = get("local", "steps")
    if epochs_text is not None and steps_text is not None:
        raise ConfigError("local: set either epochs or steps, not both")
    local_epochs = None
    local_steps = None
    if steps_text is not None:
        local_steps = _parse_int("local", "steps", steps_text)
    else:
        local_epochs = _parse_int("local", "epochs", epochs_text or "2")

    # distillation: a plain alpha pins alpha_min = alpha_max = value
    alpha_text = (get("distill", "alpha", "dynamic") or "dynamic").strip().lower()
    if alpha_text == "dynamic":
        alpha_min = _parse_float("distill", "alpha_min", get("distill", "alpha_min", "0.2"))
        alpha_max = _parse_float("distill", "alpha_max", get("distill", "alpha_max", "0.8"))
    else:
        alpha_min = alpha_max = _parse_float("distill", "alpha", alpha_text)
    steps_val = get("distill", "steps", "auto")
    distill_steps = None if steps_val.strip().lower() == "auto" else _parse_int(
        "distill", "steps", steps_val
    )
    distill = DistillConfig(
        eta_d=_parse_float("distill", "eta_d", get("distill", "eta_d", "0.05")),
        alpha_min=alpha_min,
        alpha_max=alpha_max,
        nu=_parse_float("distill", "nu", get("distill", "nu", "5")),
        batch_size=_parse_int("distill", "batch", get("distill", "batch", "128")),
        steps=distill_steps,
        optimizer=(get("distill", "optimizer", "adam") or "adam").strip().lower(),
        beta1=_parse_float("distill", "beta1", get("distill", "beta1", "0.9")),
        beta2=_parse_float("distill", "beta2", get("distill", "beta2", "0.999")),
        eps=_parse_float("distill", "eps", get("distill", "eps", "1e-8")),
    )

    algo = AlgoConfig(
        algorithm=(get("server", "algorithm", "fedecho") or "fedecho").strip().lower(),
        eta_l=_parse_float("local", "eta_l", get("local", "eta_l", "0.05")),
        eta=_parse_float("server", "eta", get("server", "eta", "1.0")),
        local_epochs=local_epochs,
        local_steps=local_steps,
        local_batch=_parse_int("local", "batch", get("local", "batch", "32")),
        weight_decay=_parse_float(
            "local", "weight_decay", get("local", "weight_decay", "0")
        ),
        distill=distill,
        adaptive_beta1=_parse_float(
            "server", "adaptive_beta1", get("server", "adaptive_beta1", "0.9")
        ),
        adaptive_beta2=_parse_float(
            "server", "adaptive_beta2", get("server", "adaptive_beta2", "0.999")
        ),
        adaptive_eps=_parse_float(
            "server", "adaptive_eps", get("server", "adaptive_eps", "1e-8")
        ),
    )

    # delay profile: named base, any field overridable
    profile_name = (get("delay", "profile", "large") or "large").strip().lower()
    if profile_name == "large":
        base = LARGE_DELAY
    elif profile_name == "mild":
        base = MILD_DELAY
    elif profile_name == "custom":
        base = LARGE_DELAY
        for cat in ("short", "medium", "long"):
            if get("delay", cat) is None:
                raise ConfigError(f"delay.{cat}: required for profile = custom")
    else:
        raise ConfigError(f"delay.profile: unknown profile {profile_name!r}")
    delay = DelayProfile(
        short=_parse_pair("delay", "short", get("delay", "short", "")) if get("delay", "short") else base.short,
        medium=_parse_pair("delay", "medium", get("delay", "medium", "")) if get("delay", "medium") else base.medium,
        long=_parse_pair("delay", "long", get("delay", "long", "")) if get("delay", "long") else base.long,
        gamma=_parse_float("delay", "gamma", get("delay", "gamma", str(base.gamma))),
        max_long_fraction=_parse_float(
            "delay", "max_long_fraction",
            get("delay", "max_long_fraction", str(base.max_long_fraction)),
        ),
    )

    return RunConfig(
        dataset=dataset,
        dataset_file=dataset_file,
        arch=(get("model", "arch", "linear") or "linear").strip().lower(),
        hidden=_parse_int("model", "hidden", get("model", "hidden", "32")),
        n_clients=_parse_int("federation", "clients", get("federation", "clients", "10")),
        concurrency=_parse_int(
            "federation", "concurrency", get("federation", "concurrency", "5")
        ),
        buffer_size=_parse_int("federation", "buffer", get("federation", "buffer", "3")),
        rounds=_parse_int("federation", "rounds", get("federation", "rounds", "50")),
        alpha_dir=_parse_float(
            "federation", "alpha_dir", get("federation", "alpha_dir", "0.3")
        ),
        algo=algo,
        delay=delay,
        runtime_mode=(get("delay", "runtime_mode", "resample") or "resample").strip().lower(),
        seeds=_parse_seeds(get("run", "seeds", "0")),
        eval_every=_parse_int("run", "eval_every", get("run", "eval_every", "10")),
        output_dir=get("run", "output_dir", "runs/out"),
        save_dataset=_parse_bool(
            "run", "save_dataset", get("run", "save_dataset", "false")
        ),
    )


def load_config(path) -> RunConfig:
    return build_config(read_raw(path))
