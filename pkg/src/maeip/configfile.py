"""JSON configuration files for the training commands."""

from __future__ import annotations

import json
from collections.abc import Callable, Mapping
from dataclasses import fields
from enum import Enum
from pathlib import Path
from typing import Any, TypeVar

from .errors import ConfigError

T = TypeVar("T")


def load_json(path: str | Path) -> dict[str, Any]:
    """Read a JSON object.

    Raises:
        FileNotFoundError: If the file does not exist
        ConfigError: If it is not a JSON object
    """
    text = Path(path).read_text()
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a JSON object, got {type(data).__name__}")
    return data


def enum_value(enum: type[Enum], value: object) -> Enum:
    if isinstance(value, enum):
        return value
    try:
        return enum[str(value).upper().replace("-", "_")]
    except KeyError:
        choices = ", ".join(m.name.lower() for m in enum)
        raise ConfigError(f"{value!r} is not one of: {choices}") from None


def build(cls: Callable[..., T], data: Mapping[str, Any], converters: Mapping[str, Callable[[Any], Any]] | None = None) -> T:
    """Instantiate a config dataclass from plain values, rejecting unknown keys.

    ``None`` values are dropped so command-line flags that were not given do
    not override file values or defaults.
    """
    known = {f.name for f in fields(cls)}
    unknown = set(data) - known
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in data.items():
        if value is None:
            continue
        convert = (converters or {}).get(key)
        try:
            kwargs[key] = convert(value) if convert else value
        except (TypeError, ValueError) as exc:
            raise ConfigError(f"{key}: {exc}") from exc
    obj = cls(**kwargs)
    validate = getattr(obj, "validate", None)
    return validate() if validate else obj
