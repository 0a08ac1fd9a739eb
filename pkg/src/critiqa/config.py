"""
Configuration Management for critiqa

Every tunable lives in the dataclass of the module that consumes it; AppConfig
composes them into one tree that can be loaded from and saved to JSON. Values
resolve as built-in defaults, then the config file, then command-line flags.
"""

import json
from dataclasses import asdict, dataclass, field, fields
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from .core.advgen import GenConfig
from .core.inference import InferenceConfig
from .core.models import ActorConfig, CriticConfig
from .core.run_logger import LogFormat
from .core.run_manifest import atomic_write_text
from .core.training import TrainConfig
from .errors import ConfigError


@dataclass
class PathsConfig:
    """Default artifact locations; commands fall back to these when a flag is omitted."""

    squad: Optional[str] = None
    pairs: Optional[str] = None
    critic: Optional[str] = None
    actor: Optional[str] = None
    report: Optional[str] = None
    log: Optional[str] = None


SECTIONS = {
    "gen": GenConfig,
    "actor": ActorConfig,
    "critic": CriticConfig,
    "train": TrainConfig,
    "infer": InferenceConfig,
    "paths": PathsConfig,
}


@dataclass
class AppConfig:
    """Complete configuration for one critiqa command."""

    gen: GenConfig = field(default_factory=GenConfig)
    actor: ActorConfig = field(default_factory=ActorConfig)
    critic: CriticConfig = field(default_factory=CriticConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    infer: InferenceConfig = field(default_factory=InferenceConfig)
    paths: PathsConfig = field(default_factory=PathsConfig)

    # Logging and parallelism
    log_level: str = "INFO"
    log_format: str = "console"
    workers: int = 1

    def __post_init__(self):
        try:
            LogFormat(self.log_format)
        except ValueError:
            raise ConfigError(f"unknown log_format {self.log_format!r}") from None
        if self.workers < 1:
            raise ConfigError(f"workers must be >= 1, got {self.workers}")

    def to_dict(self) -> Dict[str, Any]:
        """JSON-safe nested dictionary."""
        return _jsonable(asdict(self))


def _jsonable(value: Any) -> Any:
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def _top_level_keys() -> set:
    return {f.name for f in fields(AppConfig)}


def _section_keys(name: str) -> set:
    return {f.name for f in fields(SECTIONS[name])}


def _apply(target: Dict[str, Any], updates: Mapping[str, Any], origin: str) -> None:
    for key, value in updates.items():
        if key not in _top_level_keys():
            raise ConfigError(f"{origin}: unknown key {key!r}")
        if key in SECTIONS:
            if not isinstance(value, Mapping):
                raise ConfigError(f"{origin}: section {key!r} must be an object")
            unknown = set(value) - _section_keys(key)
            if unknown:
                raise ConfigError(f"{origin}: unknown keys in {key!r}: {sorted(unknown)}")
            target[key].update(value)
        else:
            target[key] = value


def config_from_dict(data: Mapping[str, Any]) -> AppConfig:
    """Build an AppConfig from a (possibly partial) nested dictionary."""
    merged = AppConfig().to_dict()
    _apply(merged, data, "config")
    try:
        sections = {name: cls(**merged[name]) for name, cls in SECTIONS.items()}
        extras = {k: v for k, v in merged.items() if k not in SECTIONS}
        return AppConfig(**sections, **extras)
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from e


def merge_config(
    base: Optional[AppConfig] = None,
    file_data: Optional[Mapping[str, Any]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
) -> AppConfig:
    """Resolve defaults < file < flags.

    ``overrides`` maps dotted keys ("train.epochs") or top-level keys to values;
    None means the flag was not given and never overrides.
    """
    merged = (base or AppConfig()).to_dict()
    if file_data:
        _apply(merged, file_data, "config file")
    for dotted, value in (overrides or {}).items():
        if value is None:
            continue
        section, _, key = dotted.rpartition(".")
        if section:
            _apply(merged, {section: {key: _jsonable(value)}}, "flag")
        else:
            _apply(merged, {key: _jsonable(value)}, "flag")
    return config_from_dict(merged)


def load_config(path: Union[str, Path]) -> AppConfig:
    path = Path(path)
    try:
        data = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, json.JSONDecodeError) as e:
        raise ConfigError(f"cannot read config {path}: {e}") from e
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    return merge_config(None, data)


def read_config_file(path: Optional[Union[str, Path]]) -> Dict[str, Any]:
    """Raw config-file mapping for merge_config; empty when no file is given."""
    if path is None:
        return {}
    return load_config(path).to_dict()


def save_config(config: AppConfig, path: Union[str, Path]) -> Path:
    return atomic_write_text(path, json.dumps(config.to_dict(), indent=2, sort_keys=True) + "\n")
