"""``key=value`` configuration files.

Keys carry the prefix of the object they configure::

    # training
    train.lam = 0.5
    train.bandwidths = 2, 5, 10, 20, 40, 80
    synth.modalities = print, video
    model.preset = desk

Values are coerced to the type of the dataclass field they set. Command line flags override file values, which
override the dataclass defaults.
"""

from __future__ import annotations

import dataclasses
import typing
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Type, TypeVar, Union

from .exceptions import ValidationError
from .model import ArchitectureConfig, architecture_preset
from .synthetic import SyntheticSpec
from .training import TrainConfig

T = TypeVar("T")

_TRUE = ("true", "yes", "on", "1")
_FALSE = ("false", "no", "off", "0")
MODEL_KEYS: Dict[str, Any] = {"preset": str, "input_side": int}


def coerce(value: str, hint: Any) -> Any:
    """Converts a text value to a field type: int, float, bool, str or a homogeneous tuple (comma list)."""
    text = value.strip()
    origin = typing.get_origin(hint)
    if origin is tuple:
        item_type = typing.get_args(hint)[0]
        return tuple(coerce(item, item_type) for item in text.split(",") if item.strip())
    if hint is bool:
        if text.lower() in _TRUE:
            return True
        if text.lower() in _FALSE:
            return False
        raise ValueError(f"'{text}' is not a boolean")
    if hint is int:
        return int(text)
    if hint is float:
        return float(text)
    if hint is str:
        return text
    raise ValueError(f"unsupported field type {hint!r}")


def field_types(cls: Type[Any]) -> Dict[str, Any]:
    hints = typing.get_type_hints(cls)
    return {item.name: hints[item.name] for item in dataclasses.fields(cls) if item.init}


def build(cls: Type[T], values: Mapping[str, Any]) -> T:
    """Instantiates a config dataclass from already coerced values; invalid combinations raise ValidationError."""
    try:
        return cls(**values)
    except ValidationError:
        raise
    except (TypeError, ValueError) as exc:
        raise ValidationError(f"invalid {cls.__name__}: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Coerced values of a configuration file, by section."""

    train: Dict[str, Any] = field(default_factory=dict)
    synth: Dict[str, Any] = field(default_factory=dict)
    model: Dict[str, Any] = field(default_factory=dict)

    def train_config(self, **overrides: Any) -> TrainConfig:
        return build(TrainConfig, {**self.train, **{k: v for k, v in overrides.items() if v is not None}})

    def synthetic_spec(self, **overrides: Any) -> SyntheticSpec:
        return build(SyntheticSpec, {**self.synth, **{k: v for k, v in overrides.items() if v is not None}})

    def architecture(self, preset: Optional[str] = None, input_side: Optional[int] = None) -> ArchitectureConfig:
        return architecture_preset(
            preset or self.model.get("preset", "desk"),
            input_side if input_side is not None else self.model.get("input_side"),
        )


SECTIONS: Dict[str, Dict[str, Any]] = {
    "train": field_types(TrainConfig),
    "synth": field_types(SyntheticSpec),
    "model": MODEL_KEYS,
}


def parse_config(text: str, source: str = "<config>") -> RunConfig:
    """Parses configuration text.

    Raises:
        ValidationError: On a malformed line, an unknown key or an uncoercible value, naming the line.
    """
    sections: Dict[str, Dict[str, Any]] = {name: {} for name in SECTIONS}
    for number, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line.startswith("#"):
            continue
        key, separator, value = line.partition("=")
        key = key.strip()
        section, dot, name = key.partition(".")
        if not separator or not dot:
            raise ValidationError(f"{source}:{number}: expected 'section.key = value', got '{line}'")
        if section not in SECTIONS or name not in SECTIONS[section]:
            raise ValidationError(f"{source}:{number}: unknown configuration key '{key}'")
        try:
            sections[section][name] = coerce(value, SECTIONS[section][name])
        except ValueError as exc:
            raise ValidationError(f"{source}:{number}: invalid value for '{key}': {exc}") from exc
    return RunConfig(train=sections["train"], synth=sections["synth"], model=sections["model"])


def load_config(path: Optional[Union[str, Path]]) -> RunConfig:
    """Reads a configuration file; no path yields an empty configuration."""
    if path is None:
        return RunConfig()
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ValidationError(f"cannot read configuration '{path}': {exc.strerror or exc}") from exc
    return parse_config(text, str(path))


__all__ = [
    "RunConfig",
    "build",
    "coerce",
    "field_types",
    "load_config",
    "parse_config",
]
