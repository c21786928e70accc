#  Copyright (c) 2024 The pyGEM developers.
#  Distributed under the terms of the MIT license.
import dataclasses
import hashlib
import logging
import os.path
import sys
from typing import Any, Dict, Mapping, Optional, Type, TypeVar, get_type_hints

import numpy as np

from .gem_errors import GEMConfigError
from .gem_logging import log

if sys.version_info >= (3, 10):
    from typing import TypeAlias
else:
    from typing_extensions import TypeAlias

C = TypeVar("C")
ConfigValues: TypeAlias = Dict[str, str]
"""Raw ``key -> value`` strings read from a flat config file or the command line."""


def read_config_file(path: str) -> ConfigValues:
    """
    Reads a flat key-value config file.

    Each non-blank line has the form ``key = value``; everything after a ``#`` is a comment.

    :param path: the path of the config file.
    :return: a dictionary of raw string values.
    """
    if not os.path.isfile(path):
        raise GEMConfigError(f"Config file '{path}' does not exist!")
    values: ConfigValues = {}
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.split("#", 1)[0].strip()
            if len(line) == 0:
                continue
            if "=" not in line:
                raise GEMConfigError(f"[{path}:{line_no}] Expected 'key = value', got '{line}'")
            key, value = line.split("=", 1)
            key = key.strip().replace("-", "_")
            if key in values:
                log(f"[{path}:{line_no}] Duplicate config key '{key}', the last value wins.", severity=logging.WARN)
            values[key] = value.strip()
    return values


def _convert(name: str, value: Any, target: Any) -> Any:
    if not isinstance(value, str):
        return value
    origin = getattr(target, "__origin__", None)
    try:
        if target is bool:
            lowered = value.lower()
            if lowered in {"1", "true", "yes", "on"}:
                return True
            if lowered in {"0", "false", "no", "off"}:
                return False
            raise ValueError(value)
        if target is int:
            return int(value)
        if target is float:
            return float(value)
        if target is str:
            return value
        if origin is tuple or target is tuple:
            args = getattr(target, "__args__", (str, ...))
            item_type = args[0] if len(args) > 0 else str
            items = [v.strip() for v in value.split(",") if len(v.strip()) > 0]
            return tuple(_convert(name, v, item_type) for v in items)
        if origin is not None and type(None) in getattr(target, "__args__", ()):
            # Optional[X]
            if value.lower() in {"", "none", "null"}:
                return None
            inner = [a for a in target.__args__ if a is not type(None)][0]
            return _convert(name, value, inner)
    except ValueError:
        raise GEMConfigError(f"Invalid value '{value}' for config key '{name}'")
    return value


def resolve_config(config_type: Type[C], file_values: Optional[Mapping[str, Any]] = None,
                   overrides: Optional[Mapping[str, Any]] = None) -> C:
    """
    Builds a config dataclass, applying values with the precedence: overrides > file values > defaults.

    :param config_type: the dataclass type to construct.
    :param file_values: values read from a config file (strings are converted to the field's type).
    :param overrides: values given explicitly, typically command line flags. ``None`` values are ignored.
    :return: a validated config object.
    """
    hints = get_type_hints(config_type)
    field_names = {f.name for f in dataclasses.fields(config_type)}  # type: ignore[arg-type]
    merged: Dict[str, Any] = {}
    for source in (file_values or {}), (overrides or {}):
        for key, value in source.items():
            if value is None:
                continue
            if key not in field_names:
                raise GEMConfigError(f"Unknown config key '{key}' for {config_type.__name__}; expected one of: "
                                     f"{', '.join(sorted(field_names))}")
            merged[key] = _convert(key, value, hints[key])
    config = config_type(**merged)
    validate = getattr(config, "validate", None)
    if validate is not None:
        validate()
    return config


def config_to_dict(config: Any) -> Dict[str, Any]:
    """
    Converts a config dataclass to a JSON-friendly dictionary.
    """
    out: Dict[str, Any] = {}
    for key, value in dataclasses.asdict(config).items():
        out[key] = list(value) if isinstance(value, tuple) else value
    return out


def derive_seed(seed: int, label: str) -> int:
    """
    Derives a reproducible 64-bit sub-seed from a parent seed and a label.

    :param seed: the parent seed.
    :param label: a label naming the consumer of the sub-seed, eg: ``"week-2"``.
    :return: a new seed in ``[0, 2**64)``.
    """
    digest = hashlib.blake2b(f"{seed & 0xFFFFFFFFFFFFFFFF}:{label}".encode("utf-8"), digest_size=8).digest()
    return int.from_bytes(digest, "little")


def make_rng(seed: int, label: Optional[str] = None) -> np.random.Generator:
    """
    Creates a counter-based random stream for the given seed (and optional label).
    """
    key = seed if label is None else derive_seed(seed, label)
    return np.random.Generator(np.random.Philox(key=key & 0xFFFFFFFFFFFFFFFF))
