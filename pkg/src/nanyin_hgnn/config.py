"""
Versioned run configuration.

Every tunable constant lives in one nested structure that round-trips through
YAML. Sections map onto the per-module config dataclasses; ``--set
section.key=value`` overrides are parsed as YAML scalars.
"""

from __future__ import annotations

import dataclasses
import enum
from dataclasses import dataclass, field, fields

import yaml

from .ensemble import EnsembleConfig
from .errors import ConfigError
from .gnn.model import ModelConfig
from .gnn.train import TrainConfig
from .metrics import ORSConfig
from .nianzhi import NianzhiConfig
from .ornament import OrnamentConfig
from .tokenizer import NianzhiDetectConfig

CONFIG_VERSION = 1


@dataclass(frozen=True)
class TokenizerConfig:
    mode: str = "wukong"
    max_segment_seconds: float = 180.0


@dataclass(frozen=True)
class GraphConfig:
    density: float = 0.6
    upper_probability: float = 0.9
    edge_weight: float = 0.5
    pentatonic_factor: float = 2.0
    technique_window: float = 4.0
    phrase_gap: float = 1.0


@dataclass(frozen=True)
class Config:
    version: int = CONFIG_VERSION
    tokenizer: TokenizerConfig = field(default_factory=TokenizerConfig)
    detection: NianzhiDetectConfig = field(default_factory=NianzhiDetectConfig)
    graph: GraphConfig = field(default_factory=GraphConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    nianzhi: NianzhiConfig = field(default_factory=NianzhiConfig)
    ornament: OrnamentConfig = field(default_factory=OrnamentConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    ors: ORSConfig = field(default_factory=ORSConfig)


SECTIONS = {f.name: f.default_factory for f in fields(Config) if f.name != "version"}


def _plain(value):
    if isinstance(value, enum.Enum):
        return value.value
    if isinstance(value, (list, tuple)):
        return [_plain(v) for v in value]
    if isinstance(value, dict):
        return {k: _plain(v) for k, v in value.items()}
    return value


def _tupled(value):
    if isinstance(value, list):
        return tuple(_tupled(v) for v in value)
    return value


def to_dict(cfg: Config) -> dict:
    return _plain(dataclasses.asdict(cfg))


def _build_section(name: str, values: dict):
    cls = SECTIONS[name]
    known = {f.name: f for f in fields(cls)}
    unknown = set(values) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {sorted(unknown)}")
    base = cls()
    kwargs = {}
    for k, v in values.items():
        default = getattr(base, k)
        if isinstance(default, tuple):
            v = _tupled(v)
        elif isinstance(default, bool):
            if not isinstance(v, bool):
                raise ConfigError(f"{name}.{k} must be true or false")
        elif isinstance(default, float) and isinstance(v, int):
            v = float(v)
        kwargs[k] = v
    try:
        return dataclasses.replace(base, **kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid [{name}]: {exc}") from exc


def from_dict(obj: dict | None) -> Config:
    obj = dict(obj or {})
    version = obj.pop("version", CONFIG_VERSION)
    if version != CONFIG_VERSION:
        raise ConfigError(f"config version {version!r}, expected {CONFIG_VERSION}")
    unknown = set(obj) - set(SECTIONS)
    if unknown:
        raise ConfigError(f"unknown config sections: {sorted(unknown)}")
    parts = {}
    for name, values in obj.items():
        if not isinstance(values, dict):
            raise ConfigError(f"section {name} must be a mapping")
        parts[name] = _build_section(name, values)
    return Config(**parts)


def load_config(path) -> Config:
    try:
        with open(path) as fh:
            obj = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse {path}: {exc}") from exc
    if obj is not None and not isinstance(obj, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    return from_dict(obj)


def dump_config(cfg: Config) -> str:
    return yaml.safe_dump(to_dict(cfg), sort_keys=True)


def apply_overrides(cfg: Config, overrides) -> Config:
    """Apply ``section.key=value`` strings on top of ``cfg``."""
    obj = to_dict(cfg)
    for item in overrides or ():
        key, sep, raw = item.partition("=")
        section, dot, name = key.strip().partition(".")
        if not sep or not dot:
            raise ConfigError(f"override {item!r} is not section.key=value")
        if section not in SECTIONS or name not in obj[section]:
            raise ConfigError(f"unknown config key {key!r}")
        try:
            obj[section][name] = yaml.safe_load(raw)
        except yaml.YAMLError as exc:
            raise ConfigError(f"cannot parse value in {item!r}") from exc
    return from_dict(obj)
