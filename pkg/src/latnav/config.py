"""JSON run configuration with strict key checking.

A config file is a JSON object with optional sections ``world``, ``model``,
``train``, ``planner``, ``oracle``, ``slice`` and ``eval``. Missing keys take
the defaults below; unknown sections or keys are rejected. Command-line
flags override file values, which override defaults.
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .planner import PlannerConfig
from .vae import ModelConfig, TrainConfig
from .worldgen import WorldConfig


@dataclass(frozen=True)
class OracleConfig:
    k: int = 10
    neighbors: str = "latent"  # or "tour": nearest frames in ground-truth order
    weights: str = "raw"  # or "decoded"

    def __post_init__(self):
        if self.k < 1:
            raise ConfigError("k", f"must be >= 1, got {self.k}")
        if self.neighbors not in ("latent", "tour"):
            raise ConfigError("neighbors", f"must be 'latent' or 'tour', got {self.neighbors!r}")
        if self.weights not in ("raw", "decoded"):
            raise ConfigError("weights", f"must be 'raw' or 'decoded', got {self.weights!r}")


@dataclass(frozen=True)
class SliceConfig:
    grid: int = 10
    lo: float = 0.05
    hi: float = 0.95
    fixed: float = 0.0
    dims: tuple | None = None  # default: the last two latent dims

    def __post_init__(self):
        if self.grid < 2:
            raise ConfigError("grid", f"must be >= 2, got {self.grid}")
        if self.dims is not None:
            object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
            if len(self.dims) != 2:
                raise ConfigError("dims", "need exactly two latent dims")


@dataclass(frozen=True)
class EvalConfig:
    seed: int = 0
    bins: int = 10

    def __post_init__(self):
        if self.bins < 1:
            raise ConfigError("bins", f"must be >= 1, got {self.bins}")


SECTIONS = {
    "world": WorldConfig,
    "model": ModelConfig,
    "train": TrainConfig,
    "planner": PlannerConfig,
    "oracle": OracleConfig,
    "slice": SliceConfig,
    "eval": EvalConfig,
}


@dataclass(frozen=True)
class RunConfig:
    world: WorldConfig = field(default_factory=WorldConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    planner: PlannerConfig = field(default_factory=PlannerConfig)
    oracle: OracleConfig = field(default_factory=OracleConfig)
    slice: SliceConfig = field(default_factory=SliceConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)


def _coerce(section: str, key: str, value, default):
    name = f"{section}.{key}"
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise ConfigError(name, f"expected a boolean, got {value!r}")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise ConfigError(name, f"expected an integer, got {value!r}")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise ConfigError(name, f"expected a number, got {value!r}")
        return float(value)
    if isinstance(default, str):
        if not isinstance(value, str):
            raise ConfigError(name, f"expected a string, got {value!r}")
        return value
    if isinstance(default, tuple) or default is None:
        if value is not None and not isinstance(value, list):
            raise ConfigError(name, f"expected a list, got {value!r}")
        return tuple(tuple(v) if isinstance(v, list) else v for v in value) if value is not None else None
    return value


def build_section(section: str, values: dict):
    cls = SECTIONS[section]
    defaults = {f.name: f.default for f in dataclasses.fields(cls)}
    if not isinstance(values, dict):
        raise ConfigError(section, "section must be a JSON object")
    kwargs = {}
    for key, value in values.items():
        if key not in defaults:
            raise ConfigError(f"{section}.{key}", "unknown key")
        kwargs[key] = _coerce(section, key, value, defaults[key])
    try:
        return cls(**kwargs)
    except ConfigError as exc:
        raise ConfigError(f"{section}.{exc.key}", str(exc).split(": ", 1)[1]) from exc


def parse_config(data: dict, overrides: dict | None = None) -> RunConfig:
    """``overrides`` maps ``"section.key"`` to values that win over ``data``."""
    if not isinstance(data, dict):
        raise ConfigError("config", "top level must be a JSON object")
    merged = {s: dict(v) if isinstance(v, dict) else v for s, v in data.items()}
    for dotted, value in (overrides or {}).items():
        section, key = dotted.split(".", 1)
        merged.setdefault(section, {})[key] = value
    for section in merged:
        if section not in SECTIONS:
            raise ConfigError(section, "unknown config section")
    return RunConfig(**{s: build_section(s, merged.get(s, {})) for s in SECTIONS})


def load_config(path=None, overrides: dict | None = None) -> RunConfig:
    data = {}
    if path is not None:
        try:
            data = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError("config", f"invalid JSON in {path}: {exc}") from exc
    return parse_config(data, overrides)


def to_dict(cfg: RunConfig) -> dict:
    return dataclasses.asdict(cfg)
