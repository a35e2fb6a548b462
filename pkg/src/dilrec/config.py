"""Flat key = value experiment configuration.

Lines hold ``key = value``; ``#`` starts a comment; keys outside the schema
are rejected. The effective config echoes back through
:func:`format_config`, which re-parses to an identical config.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, fields, replace

from .errors import ConfigError

_STRATEGIES = ("dil", "fine_tune", "full_retrain", "no_retrain")
_MODELS = ("lightgcn", "ngcf")
_AGGREGATIONS = ("sum", "mean", "concat")


@dataclass(frozen=True)
class ExperimentConfig:
    # data source: exactly one of data_path / synthetic
    data_path: str = ""
    synthetic: bool = False
    synth_users: int = 200
    synth_items: int = 100
    synth_latent_dim: int = 8
    synth_phases: int = 4
    synth_drift: float = 0.6
    synth_interactions_per_period: int = 4000
    synth_periods: int = 8
    # splitting
    k_core: int = 1
    warmup_end: int = 0
    period_length: int = 0
    period_count: int = 6
    # model
    model: str = "lightgcn"
    layers: int = 2
    dim: int = 32
    leaky_relu_slope: float = 0.2
    # training
    learning_rate: float = 0.01
    l2_coefficient: float = 1e-4
    lam: float = 0.01
    batch_size: int = 1024
    max_epochs: int = 200
    patience: int = 5
    seed: int = 0
    design: int = 1
    aggregation: str = "mean"
    strategy: str = "dil"
    # evaluation / output
    eval_k: tuple[int, ...] = (20,)
    exclude_seen: bool = True
    out_dir: str = "out"

    @property
    def primary_k(self) -> int:
        return self.eval_k[0]


# config keys map 1:1 onto dataclass fields except "lambda" (python keyword)
_KEY_TO_FIELD = {f.name: f.name for f in fields(ExperimentConfig)}
_KEY_TO_FIELD["lambda"] = "lam"
del _KEY_TO_FIELD["lam"]
_FIELD_TO_KEY = {v: k for k, v in _KEY_TO_FIELD.items()}


def _parse_bool(key: str, text: str) -> bool:
    if text == "true":
        return True
    if text == "false":
        return False
    raise ConfigError(f"config key '{key}': expected true/false, got {text!r}")


def _parse_value(key: str, field_name: str, text: str):
    kind = ExperimentConfig.__dataclass_fields__[field_name].type
    try:
        if kind == "int":
            return int(text)
        if kind == "float":
            return float(text)
        if kind == "bool":
            return _parse_bool(key, text)
        if kind == "tuple[int, ...]":
            parts = [p.strip() for p in text.split(",") if p.strip()]
            if not parts:
                raise ValueError("empty list")
            return tuple(int(p) for p in parts)
        return text
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(f"config key '{key}': cannot parse {text!r} ({exc})") from None


def _check(cond: bool, key: str, message: str) -> None:
    if not cond:
        raise ConfigError(f"config key '{key}': {message}")


def validate_config(cfg: ExperimentConfig) -> None:
    has_path = bool(cfg.data_path)
    _check(has_path != cfg.synthetic, "data_path", "set exactly one of data_path or synthetic = true")
    if cfg.synthetic:
        for key in (
            "synth_users",
            "synth_items",
            "synth_latent_dim",
            "synth_phases",
            "synth_interactions_per_period",
            "synth_periods",
        ):
            _check(getattr(cfg, key) >= 1, key, "must be positive")
        _check(cfg.synth_drift >= 0, "synth_drift", "must be non-negative")
    _check(cfg.k_core >= 1, "k_core", "must be >= 1")
    _check(cfg.warmup_end > 0, "warmup_end", "must be a positive timestamp")
    _check(cfg.period_length > 0, "period_length", "must be positive")
    _check(cfg.period_count >= 2, "period_count", "must be >= 2")
    _check(cfg.model in _MODELS, "model", f"must be one of {_MODELS}")
    _check(cfg.layers >= 1, "layers", "must be >= 1")
    _check(cfg.dim >= 1, "dim", "must be >= 1")
    _check(0.0 < cfg.leaky_relu_slope < 1.0, "leaky_relu_slope", "must lie in (0, 1)")
    _check(cfg.learning_rate > 0, "learning_rate", "must be positive")
    _check(cfg.l2_coefficient >= 0, "l2_coefficient", "must be non-negative")
    _check(cfg.lam >= 0, "lambda", "must be non-negative")
    _check(cfg.batch_size >= 1, "batch_size", "must be >= 1")
    _check(cfg.max_epochs >= 0, "max_epochs", "must be >= 0")
    _check(cfg.patience >= 1, "patience", "must be >= 1")
    _check(cfg.design in (1, 2), "design", "must be 1 or 2")
    _check(cfg.aggregation in _AGGREGATIONS, "aggregation", f"must be one of {_AGGREGATIONS}")
    _check(cfg.strategy in _STRATEGIES, "strategy", f"must be one of {_STRATEGIES}")
    _check(len(cfg.eval_k) >= 1 and all(k >= 1 for k in cfg.eval_k), "eval_k", "needs positive entries")
    _check(bool(cfg.out_dir), "out_dir", "must not be empty")


def parse_config_text(text: str, source: str = "<config>") -> ExperimentConfig:
    values: dict[str, object] = {}
    seen: set[str] = set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}: line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key = key.strip()
        value = value.strip()
        if key not in _KEY_TO_FIELD:
            raise ConfigError(f"{source}: line {lineno}: unknown config key '{key}'")
        if key in seen:
            raise ConfigError(f"{source}: line {lineno}: duplicate config key '{key}'")
        seen.add(key)
        field_name = _KEY_TO_FIELD[key]
        values[field_name] = _parse_value(key, field_name, value)
    cfg = ExperimentConfig(**values)
    validate_config(cfg)
    return cfg


def parse_config(path) -> ExperimentConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config_text(fh.read(), source=str(path))


def _format_value(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(str(v) for v in value)
    if isinstance(value, float):
        return repr(value)
    return str(value)


def format_config(cfg: ExperimentConfig) -> str:
    """Canonical echo of the effective config; re-parses to an equal config."""
    lines = []
    for f in fields(ExperimentConfig):
        value = getattr(cfg, f.name)
        if f.name == "data_path" and not value:
            continue
        lines.append(f"{_FIELD_TO_KEY[f.name]} = {_format_value(value)}")
    return "\n".join(lines) + "\n"


def config_hash(cfg: ExperimentConfig) -> str:
    """Hash of the experiment-defining keys (output location excluded)."""
    lines = [l for l in format_config(cfg).splitlines() if not l.startswith("out_dir ")]
    return hashlib.sha256("\n".join(lines).encode("utf-8")).hexdigest()[:16]


def with_overrides(cfg: ExperimentConfig, seed: int | None = None, out_dir: str | None = None) -> ExperimentConfig:
    if seed is not None:
        cfg = replace(cfg, seed=seed)
    if out_dir is not None:
        cfg = replace(cfg, out_dir=out_dir)
    validate_config(cfg)
    return cfg
