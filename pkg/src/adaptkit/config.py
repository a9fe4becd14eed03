"""Versioned JSON configs mapped onto the package dataclasses; unknown keys are rejected."""

from __future__ import annotations

import dataclasses
import json
import os
import typing
from pathlib import Path

from .cycle import BrightnessTask, TranslationConfig
from .data import ShiftSpec, SyntheticDomainSpec
from .flow import DistillConfig, ShapesConfig
from .harness import RunConfig

SCHEMA_VERSION = 1
SECTIONS = {
    "run": RunConfig,
    "data": SyntheticDomainSpec,
    "distill": DistillConfig,
    "translate": TranslationConfig,
}
LIST_SECTIONS = {"grid": RunConfig}


class ConfigError(ValueError):
    pass


def from_dict(cls, raw: dict, where: str = ""):
    """Build dataclass ``cls`` from ``raw``; nested dataclass fields recurse, lists become tuples."""
    if not isinstance(raw, dict):
        raise ConfigError(f"{where or cls.__name__}: expected an object, got {type(raw).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(raw) - set(fields))
    if unknown:
        raise ConfigError(f"{where or cls.__name__}: unknown key(s) {unknown}")
    hints = typing.get_type_hints(cls)
    kwargs = {}
    for name, value in raw.items():
        sub = hints.get(name)
        if dataclasses.is_dataclass(sub):
            value = from_dict(sub, value, f"{where}.{name}" if where else name)
        elif isinstance(value, list):
            value = tuple(tuple(v) if isinstance(v, list) else v for v in value)
        kwargs[name] = value
    return cls(**kwargs)


def to_dict(obj) -> dict:
    return dataclasses.asdict(obj)


def parse_config(raw: dict) -> dict:
    """Validate the top level and convert each known section."""
    if not isinstance(raw, dict):
        raise ConfigError("config must be a JSON object")
    if raw.get("schema") != SCHEMA_VERSION:
        raise ConfigError(f"config needs \"schema\": {SCHEMA_VERSION}, got {raw.get('schema')!r}")
    allowed = {"schema", "seeds"} | set(SECTIONS) | set(LIST_SECTIONS)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"unknown top-level key(s) {unknown}")
    out: dict = {"schema": SCHEMA_VERSION}
    try:
        for key, cls in SECTIONS.items():
            if key in raw:
                out[key] = from_dict(cls, raw[key], key)
        for key, cls in LIST_SECTIONS.items():
            if key in raw:
                if not isinstance(raw[key], list):
                    raise ConfigError(f"{key}: expected a list")
                out[key] = [from_dict(cls, item, f"{key}[{i}]") for i, item in enumerate(raw[key])]
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
    if "seeds" in raw:
        seeds = raw["seeds"]
        if not isinstance(seeds, list) or not all(isinstance(s, int) and s >= 0 for s in seeds):
            raise ConfigError("seeds must be a list of non-negative integers")
        out["seeds"] = seeds
    return out


def load_config(path: str | os.PathLike) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file not found: {p}")
    try:
        raw = json.loads(p.read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{p}: invalid JSON ({exc})") from None
    return parse_config(raw)


__all__ = [
    "BrightnessTask",
    "ConfigError",
    "DistillConfig",
    "RunConfig",
    "ShapesConfig",
    "ShiftSpec",
    "SyntheticDomainSpec",
    "TranslationConfig",
    "from_dict",
    "load_config",
    "parse_config",
    "to_dict",
]
