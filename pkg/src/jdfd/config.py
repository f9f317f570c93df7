"""Run configuration and the line-oriented config file format.

Config files are UTF-8 ``key = value`` lines; ``#`` starts a comment and
blank lines are ignored. Unknown keys are hard errors so a mistyped
hyperparameter can never silently fall back to a default.
"""
from __future__ import annotations

from dataclasses import dataclass, fields, replace

import numpy as np


class ConfigError(ValueError):
    """Config file problem; carries the offending line number when known."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        prefix = f"line {line}: " if line is not None else ""
        super().__init__(prefix + message)


@dataclass(frozen=True)
class TrainConfig:
    image_size: int = 64
    latent_dim: int = 128
    beta1: float = 0.8
    beta2: float = 0.2
    lr_cae: float = 0.005
    lr_cls: float = 0.0004
    step_size: int = 5
    decay: float = 0.8
    momentum: float = 0.0
    batch_size: int = 4
    epochs: int = 10
    seed: int = 0
    precision: str = "single"
    foreign_ratio: float = 0.0
    families: tuple[str, ...] = ("U", "F", "C")
    train_family: str = "U"
    train_per_family: int = 2000
    test_per_family: int = 400
    ablation_seeds: int = 5
    out_dir: str = "out"
    threads: int = 1
    deterministic: bool = False

    @property
    def dtype(self):
        return np.float64 if self.precision == "double" else np.float32

    def validate(self) -> "TrainConfig":
        if self.image_size < 16 or self.image_size % 16 != 0:
            raise ConfigError(f"image_size must be a positive multiple of 16, got {self.image_size}")
        if self.latent_dim < 1:
            raise ConfigError(f"latent_dim must be >= 1, got {self.latent_dim}")
        if self.beta1 < 0 or self.beta2 < 0 or (self.beta1 == 0 and self.beta2 == 0):
            raise ConfigError(f"betas must be >= 0 and not both zero, got {self.beta1}, {self.beta2}")
        if self.lr_cae <= 0 or self.lr_cls <= 0:
            raise ConfigError("learning rates must be positive")
        if self.step_size < 1:
            raise ConfigError(f"step_size must be >= 1, got {self.step_size}")
        if not 0.0 < self.decay <= 1.0:
            raise ConfigError(f"decay must be in (0, 1], got {self.decay}")
        if self.momentum < 0:
            raise ConfigError(f"momentum must be >= 0, got {self.momentum}")
        if self.batch_size < 1 or self.epochs < 1:
            raise ConfigError("batch_size and epochs must be >= 1")
        if self.precision not in ("single", "double"):
            raise ConfigError(f"precision must be 'single' or 'double', got {self.precision!r}")
        if self.foreign_ratio < 0:
            raise ConfigError(f"foreign_ratio must be >= 0, got {self.foreign_ratio}")
        if self.seed < 0 or self.seed >= 1 << 64:
            raise ConfigError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not self.families:
            raise ConfigError("families must not be empty")
        if len(set(self.families)) != len(self.families):
            raise ConfigError(f"duplicate family names in {self.families}")
        if self.train_family not in self.families:
            raise ConfigError(f"train_family {self.train_family!r} is not in families {self.families}")
        if self.train_per_family < 2 or self.test_per_family < 2:
            raise ConfigError("train_per_family and test_per_family must be >= 2")
        if self.ablation_seeds < 1:
            raise ConfigError(f"ablation_seeds must be >= 1, got {self.ablation_seeds}")
        if self.threads < 1:
            raise ConfigError(f"threads must be >= 1, got {self.threads}")
        return self


_BOOL_VALUES = {"true": True, "false": False, "1": True, "0": False}


def _convert(key: str, raw: str, kind) -> object:
    if kind == "int":
        return int(raw, 0)
    if kind == "float":
        return float(raw)
    if kind == "bool":
        if raw.lower() not in _BOOL_VALUES:
            raise ValueError(f"expected true/false for {key}, got {raw!r}")
        return _BOOL_VALUES[raw.lower()]
    if kind == "families":
        return tuple(part.strip() for part in raw.split(",") if part.strip())
    return raw


_FIELD_KINDS = {
    "image_size": "int", "latent_dim": "int", "step_size": "int",
    "batch_size": "int", "epochs": "int", "seed": "int",
    "train_per_family": "int", "test_per_family": "int",
    "ablation_seeds": "int", "threads": "int",
    "beta1": "float", "beta2": "float", "lr_cae": "float", "lr_cls": "float",
    "decay": "float", "momentum": "float", "foreign_ratio": "float",
    "precision": "str", "train_family": "str", "out_dir": "str",
    "families": "families",
    "deterministic": "bool",
}
assert set(_FIELD_KINDS) == {f.name for f in fields(TrainConfig)}


def parse_config(text: str) -> TrainConfig:
    """Parse ``key = value`` lines into a validated TrainConfig."""
    values: dict[str, object] = {}
    for lineno, raw_line in enumerate(text.splitlines(), start=1):
        line = raw_line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"expected 'key = value', got {raw_line.strip()!r}", lineno)
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in _FIELD_KINDS:
            raise ConfigError(f"unknown key {key!r}", lineno)
        if key in values:
            raise ConfigError(f"duplicate key {key!r}", lineno)
        try:
            values[key] = _convert(key, raw, _FIELD_KINDS[key])
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {exc}", lineno) from exc
    config = TrainConfig(**values)
    try:
        return config.validate()
    except ConfigError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def format_config(config: TrainConfig) -> str:
    """Render a config as text that parses back to identical values."""
    lines = []
    for f in fields(TrainConfig):
        value = getattr(config, f.name)
        if f.name == "families":
            value = ",".join(value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{f.name} = {value}")
    return "\n".join(lines) + "\n"


def load_config(path: str) -> TrainConfig:
    with open(path, "r", encoding="utf-8") as fh:
        return parse_config(fh.read())


def with_overrides(config: TrainConfig, **overrides) -> TrainConfig:
    """Copy with the given non-None fields replaced, then revalidate."""
    updates = {k: v for k, v in overrides.items() if v is not None}
    return replace(config, **updates).validate() if updates else config
