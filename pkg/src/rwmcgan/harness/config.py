"""Run configuration: defaults, ``key = value`` files and CLI overrides."""

from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass, fields
from pathlib import Path

from ..errors import DomainError

DEFAULT_DATA_DIR = os.environ.get("RWMCGAN_DATA", "data/mnist")

LEG_NAMES = {
    (False, False): "baseline",
    (True, False): "baseline+RU",
    (False, True): "baseline+WM",
    (True, True): "baseline+RU+WM",
}

# File keys and CLI flag names that differ from field names.
ALIASES = {
    "ru": "residual_units",
    "wm": "weight_mask",
    "out": "out_dir",
    "mask_refresh": "mask_refresh_epochs",
}


@dataclass(frozen=True)
class RunConfig:
    residual_units: bool = True
    weight_mask: bool = True
    mask_spatial: bool = True
    weight_dropout: bool = True
    data_dir: str = DEFAULT_DATA_DIR
    subset_per_class: int = 100
    epochs: int = 30
    max_steps: int = 0  # 0 means no step limit
    batch_size: int = 64
    lr: float = 2e-4
    beta1: float = 0.5
    beta2: float = 0.999
    adam_eps: float = 1e-8
    z_dim: int = 100
    mask_samples: int = 100
    mask_draws: int = 16
    mask_epsilon: float = 1e-6
    dropout_q: float = 0.1
    mask_refresh_epochs: int = 1
    label_smoothing: float = 0.0
    seed: int = 0
    out_dir: str = "runs/default"

    def __post_init__(self):
        if not 0.0 <= self.dropout_q <= 1.0:
            raise DomainError(f"dropout_q must lie in [0, 1], got {self.dropout_q}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise DomainError(f"label_smoothing must lie in [0, 1), got {self.label_smoothing}")
        for name in ("subset_per_class", "batch_size", "mask_samples", "mask_draws", "mask_refresh_epochs"):
            if getattr(self, name) < 1:
                raise DomainError(f"{name} must be positive, got {getattr(self, name)}")
        if self.epochs < 0 or self.max_steps < 0:
            raise DomainError("epochs and max_steps must be non-negative")

    @property
    def leg_name(self):
        return LEG_NAMES[(self.residual_units, self.weight_mask)]

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in known})


def _field_types():
    return {f.name: f.type for f in fields(RunConfig)}


def canonical_key(key):
    key = key.strip().lower().replace("-", "_")
    return ALIASES.get(key, key)


def parse_value(key, raw):
    kind = _field_types()[key]
    raw = raw.strip()
    if kind in ("bool", bool):
        lowered = raw.lower()
        if lowered in ("on", "true", "yes", "1"):
            return True
        if lowered in ("off", "false", "no", "0"):
            return False
        raise DomainError(f"{key}: expected on/off, got {raw!r}")
    try:
        if kind in ("int", int):
            return int(raw)
        if kind in ("float", float):
            return float(raw)
    except ValueError as exc:
        raise DomainError(f"{key}: cannot parse {raw!r}") from exc
    return raw


def parse_config_text(text):
    """Parse flat ``key = value`` lines; ``#`` starts a comment."""
    values = {}
    known = _field_types()
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise DomainError(f"config line {lineno}: expected 'key = value', got {line!r}")
        key, raw = line.split("=", 1)
        key = canonical_key(key)
        if key not in known:
            raise DomainError(f"config line {lineno}: unknown key {key!r}")
        values[key] = parse_value(key, raw)
    return values


def load_config(path=None, overrides=None, base=None):
    """Defaults, then the file at ``path``, then ``overrides`` (CLI wins)."""
    values = {}
    if path is not None:
        values.update(parse_config_text(Path(path).read_text(encoding="utf-8")))
    for key, value in (overrides or {}).items():
        if value is not None:
            values[canonical_key(key)] = value
    base = base or RunConfig()
    return base.replace(**values)


def dump_config_text(config):
    lines = ["# rwmcgan run configuration"]
    for key, value in config.to_dict().items():
        if isinstance(value, bool):
            value = "on" if value else "off"
        lines.append(f"{key} = {value}")
    return "\n".join(lines) + "\n"
