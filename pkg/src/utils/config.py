"""
Configuration - Flat ``key = value`` files resolved into typed settings.

Every field of ModelConfig, TrainConfig, DegradationPolicy and SynthConfig
has exactly one key. Command-line overrides win over file values; unknown
keys and malformed values raise ConfigError.
"""

import logging
import typing
from dataclasses import dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Iterable, Mapping, Optional, Union

from src.core.errors import ConfigError
from src.model.config import ModelConfig
from src.services.synth import DegradationPolicy
from src.services.trainer import TrainConfig

logger = logging.getLogger("ssdnet.config")

TRUE_WORDS = ("1", "true", "yes", "on")
FALSE_WORDS = ("0", "false", "no", "off")


@dataclass(frozen=True)
class SynthConfig:
    """Dataset sizes for synthesis."""

    n_train: int = 64
    n_test: int = 16
    image_width: int = 64
    image_height: int = 64

    def __post_init__(self):
        if self.n_train < 0 or self.n_test < 0 or self.n_train + self.n_test == 0:
            raise ConfigError("n_train and n_test must be >= 0 and not both 0")
        for extent in (self.image_width, self.image_height):
            if extent < 16 or extent % 2:
                raise ConfigError(f"image extents must be even and >= 16, got {extent}")


@dataclass(frozen=True)
class Settings:
    """Fully resolved configuration of one invocation."""

    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    policy: DegradationPolicy = field(default_factory=DegradationPolicy)
    synth: SynthConfig = field(default_factory=SynthConfig)

    def to_flat(self, sections: Optional[Iterable[str]] = None) -> dict[str, Any]:
        """One entry per config key, in section order; sections limits which ones."""
        wanted = set(sections) if sections is not None else None
        flat: dict[str, Any] = {}
        for section, _ in SECTIONS:
            if wanted is not None and section not in wanted:
                continue
            part = getattr(self, section)
            for f in fields(part):
                flat[f.name] = getattr(part, f.name)
        return flat


SECTIONS = (
    ("model", ModelConfig),
    ("train", TrainConfig),
    ("policy", DegradationPolicy),
    ("synth", SynthConfig),
)


def _key_index() -> dict[str, tuple[str, Any]]:
    index: dict[str, tuple[str, Any]] = {}
    for section, cls in SECTIONS:
        hints = typing.get_type_hints(cls)
        for f in fields(cls):
            if f.name in index:
                raise ConfigError(f"config key {f.name} is defined by two sections")
            index[f.name] = (section, hints[f.name])
    return index


KEYS = _key_index()


def parse_config_text(text: str, source: str = "<config>") -> dict[str, str]:
    """
    Parse ``key = value`` lines; ``#`` starts a comment.

    Raises:
        ConfigError: a line without '=', an empty key or a repeated key
    """
    values: dict[str, str] = {}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{number}: expected 'key = value', got {raw.strip()!r}")
        key, value = (part.strip() for part in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{number}: empty key")
        if key in values:
            raise ConfigError(f"{source}:{number}: duplicate key {key!r}")
        values[key] = value
    return values


def load_config_file(path: Union[str, Path]) -> dict[str, str]:
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    return parse_config_text(text, str(path))


def convert_value(key: str, value: Any) -> Any:
    """Convert a raw string (or already-typed value) to the type of ``key``."""
    if key not in KEYS:
        raise ConfigError(f"unknown config key: {key!r}")
    _, kind = KEYS[key]
    if not isinstance(value, str):
        return tuple(value) if typing.get_origin(kind) is tuple else value
    text = value.strip()
    try:
        if kind is bool:
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(f"not a boolean: {text!r}")
        if kind is int:
            return int(text)
        if kind is float:
            return float(text)
        if typing.get_origin(kind) is tuple:
            parts = [p for p in text.replace(",", " ").split() if p]
            if len(parts) != 2:
                raise ValueError(f"expected two numbers 'lo, hi', got {text!r}")
            return (float(parts[0]), float(parts[1]))
        return text
    except ValueError as e:
        raise ConfigError(f"invalid value for {key}: {e}") from None


def resolve_settings(
    path: Optional[Union[str, Path]] = None,
    overrides: Optional[Mapping[str, Any]] = None,
    base: Optional[Settings] = None,
) -> Settings:
    """
    Merge defaults, then the file, then overrides.

    Args:
        path: Optional config file
        overrides: Key -> value (None values are ignored)
        base: Starting point (defaults when omitted)

    Returns:
        Validated settings
    """
    merged: dict[str, Any] = {}
    if path is not None:
        merged.update({k: convert_value(k, v) for k, v in load_config_file(path).items()})
    for key, value in (overrides or {}).items():
        if value is not None:
            merged[key] = convert_value(key, value)

    settings = base or Settings()
    by_section: dict[str, dict[str, Any]] = {}
    for key, value in merged.items():
        section, _ = KEYS[key]
        by_section.setdefault(section, {})[key] = value
    try:
        for section, changes in by_section.items():
            settings = replace(settings, **{section: replace(getattr(settings, section), **changes)})
    except TypeError as e:
        raise ConfigError(f"invalid configuration: {e}") from None
    return settings


def describe_settings(settings: Settings, sections: Optional[Iterable[str]] = None) -> str:
    return ", ".join(f"{key}={value}" for key, value in settings.to_flat(sections).items())
