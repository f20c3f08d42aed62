"""Experiment configuration: flat key=value files, CLI overrides, defaults.

Configuration is explicit-only: unknown keys are hard errors and environment
variables are never consulted.  Defaults resolve per (dataset, algorithm) to
the standard training recipe: centralized runs use Adam at 1e-3 with batch
500 (movie ratings) or 100 (anime ratings); federated runs use SGD at 0.1
with batch 10 and 5 local epochs; momentum 0.9 and weight decay 5e-4
throughout; 800 rounds/epochs.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields

DATASETS = ("ml1m", "anime", "synthetic")
ALGORITHMS = ("joint", "fedavg", "personalfr")
FEEDBACKS = ("explicit", "implicit")
OPTIMIZERS = ("sgd", "adam")


@dataclass
class ExperimentConfig:
    dataset: str = "synthetic"
    data_path: str | None = None
    feedback: str = "explicit"
    algorithm: str = "joint"
    pc_enabled: bool = True
    M: int = 1
    C: float = 0.1
    B: int | None = None
    K: int = 5
    T: int | None = None
    optimizer: str | None = None
    learning_rate: float | None = None
    momentum: float = 0.9
    weight_decay: float = 5e-4
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_eps: float = 1e-8
    seed: int = 0
    eval_every: int | None = None
    output_dir: str = "runs/run"
    train_fraction: float = 0.8
    binarize_threshold: float | None = None
    checkpoint_every: int | None = None
    dtype: str = "float64"
    synth_users: int = 200
    synth_items: int = 100
    synth_sparsity: float = 0.95
    synth_rank: int = 8
    synth_noise: float = 0.3
    synth_rating_max: int = 5
    synth_popularity: float = 0.8
    synth_min_ratings: int = 5


_FIELD_NAMES = [f.name for f in fields(ExperimentConfig)]

_BOOL_FIELDS = {"pc_enabled"}
_INT_FIELDS = {
    "M", "B", "K", "T", "seed", "eval_every", "checkpoint_every",
    "synth_users", "synth_items", "synth_rank", "synth_rating_max",
    "synth_min_ratings",
}
_FLOAT_FIELDS = {
    "C", "learning_rate", "momentum", "weight_decay", "adam_beta1",
    "adam_beta2", "adam_eps", "train_fraction", "binarize_threshold",
    "synth_sparsity", "synth_noise", "synth_popularity",
}
_OPTIONAL_STR_FIELDS = {"data_path"}


def _parse_value(key: str, raw: str):
    raw = raw.strip()
    if key in _OPTIONAL_STR_FIELDS:
        return raw or None
    if raw == "" and key in ("B", "T", "optimizer", "learning_rate",
                             "eval_every", "binarize_threshold", "checkpoint_every"):
        return None
    try:
        if key in _BOOL_FIELDS:
            low = raw.lower()
            if low in ("true", "1", "yes", "on"):
                return True
            if low in ("false", "0", "no", "off"):
                return False
            raise ValueError(f"not a boolean: {raw!r}")
        if key in _INT_FIELDS:
            return int(raw)
        if key in _FLOAT_FIELDS:
            return float(raw)
    except ValueError as exc:
        raise ValueError(f"config key {key!r}: {exc}") from None
    return raw


def read_config_file(path: str) -> dict:
    """Parse a flat ``key = value`` file; ``#`` starts a comment."""
    values: dict = {}
    with open(path, "r", encoding="utf-8") as handle:
        for lineno, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{path}: line {lineno}: expected key = value")
            key, raw = line.split("=", 1)
            key = key.strip()
            if key not in _FIELD_NAMES:
                raise ValueError(f"{path}: line {lineno}: unknown config key {key!r}")
            values[key] = _parse_value(key, raw)
    return values


def parse_config(path: str | None = None, overrides: dict | None = None) -> ExperimentConfig:
    """Resolve a full config from an optional file plus override strings.

    Overrides (CLI ``key=value`` tokens) win over file values.  Unknown keys
    and out-of-range values are hard errors.
    """
    values: dict = {}
    if path is not None:
        values.update(read_config_file(path))
    for key, raw in (overrides or {}).items():
        if key not in _FIELD_NAMES:
            raise ValueError(f"unknown config key {key!r}")
        values[key] = _parse_value(key, raw) if isinstance(raw, str) else raw
    cfg = ExperimentConfig(**values)
    return resolve(cfg)


def resolve(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill dependent defaults and validate every field."""
    if cfg.dataset not in DATASETS:
        raise ValueError(f"unknown dataset {cfg.dataset!r}")
    if cfg.algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {cfg.algorithm!r}")
    if cfg.feedback not in FEEDBACKS:
        raise ValueError(f"unknown feedback {cfg.feedback!r}")
    if cfg.dataset in ("ml1m", "anime") and not cfg.data_path:
        raise ValueError(f"dataset {cfg.dataset!r} requires data_path")

    joint = cfg.algorithm == "joint"
    if cfg.optimizer is None:
        cfg.optimizer = "adam" if joint else "sgd"
    if cfg.optimizer not in OPTIMIZERS:
        raise ValueError(f"unknown optimizer {cfg.optimizer!r}")
    if cfg.learning_rate is None:
        cfg.learning_rate = 1e-3 if joint else 1e-1
    if cfg.B is None:
        if joint:
            cfg.B = 100 if cfg.dataset == "anime" else 500
        else:
            cfg.B = 10
    if cfg.T is None:
        cfg.T = 800
    if cfg.binarize_threshold is None:
        cfg.binarize_threshold = 8.0 if cfg.dataset == "anime" else 3.5
    if cfg.eval_every is None:
        cfg.eval_every = 1 if cfg.T <= 100 else 10
    if cfg.checkpoint_every is None:
        cfg.checkpoint_every = max(1, cfg.T // 10)

    if not 0.0 < cfg.C <= 1.0:
        raise ValueError("C must be in (0, 1]")
    if cfg.M < 1 or cfg.K < 0 or cfg.T < 0 or cfg.B < 1:
        raise ValueError("M, K, T, B out of range")
    if not 0.0 < cfg.train_fraction < 1.0:
        raise ValueError("train_fraction must be in (0, 1)")
    if not 0.0 < cfg.synth_sparsity < 1.0:
        raise ValueError("synth_sparsity must be in (0, 1)")
    if cfg.dtype not in ("float64", "float32"):
        raise ValueError(f"unknown dtype {cfg.dtype!r}")
    if cfg.learning_rate <= 0:
        raise ValueError("learning_rate must be positive")
    if cfg.eval_every < 1 or cfg.checkpoint_every < 1:
        raise ValueError("eval_every and checkpoint_every must be >= 1")
    return cfg


def config_to_text(cfg: ExperimentConfig) -> str:
    """Canonical echo of a resolved config, one ``key = value`` line per field."""
    lines = []
    for name in _FIELD_NAMES:
        value = getattr(cfg, name)
        lines.append(f"{name} = {'' if value is None else value}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Stable identity of a resolved config, ignoring where output is written."""
    text = "\n".join(
        line for line in config_to_text(cfg).splitlines()
        if not line.startswith("output_dir ")
    )
    return hashlib.sha256(text.encode()).hexdigest()[:16]


def to_federation_config(cfg: ExperimentConfig):
    from .federation import FederationConfig

    return FederationConfig(
        algorithm=cfg.algorithm,
        M=cfg.M,
        C=cfg.C,
        K=cfg.K,
        T=cfg.T,
        B=cfg.B,
        pc_enabled=cfg.pc_enabled,
        seed=cfg.seed,
        optimizer=cfg.optimizer,
        learning_rate=cfg.learning_rate,
        momentum=cfg.momentum,
        weight_decay=cfg.weight_decay,
        adam_beta1=cfg.adam_beta1,
        adam_beta2=cfg.adam_beta2,
        adam_eps=cfg.adam_eps,
        feedback=cfg.feedback,
        eval_every=cfg.eval_every,
        dtype=cfg.dtype,
    )
