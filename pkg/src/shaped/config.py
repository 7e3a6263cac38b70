"""``key = value`` configuration files with typed coercion against dataclass fields."""

from __future__ import annotations

import dataclasses
import types
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


def parse_config_text(text: str, where: str = "<config>") -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        key, sep, value = line.partition("=")
        key = key.strip()
        if not sep or not key:
            raise ConfigError(f"{where}:{lineno}: expected key = value, got {line!r}")
        if key in out:
            raise ConfigError(f"{where}:{lineno}: duplicate key {key!r}")
        out[key] = value.strip()
    return out


def load_config(path) -> dict[str, str]:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"config file not found: {path}")
    return parse_config_text(path.read_text(encoding="utf-8"), str(path))


def parse_overrides(items) -> dict[str, str]:
    out = {}
    for item in items:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"override must look like key=value, got {item!r}")
        out[key.strip()] = value.strip()
    return out


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(raw: str, tp, key: str):
    origin = typing.get_origin(tp)
    args = typing.get_args(tp)
    if origin in (typing.Union, types.UnionType):
        if raw.lower() in ("", "none"):
            return None
        return _coerce(raw, next(a for a in args if a is not type(None)), key)
    if origin is tuple:
        return tuple(_coerce(x, args[0], key) for x in raw.replace(",", " ").split())
    try:
        if tp is bool:
            if raw.lower() in _TRUE:
                return True
            if raw.lower() in _FALSE:
                return False
            raise ValueError(raw)
        if tp is int:
            return int(raw)
        if tp is float:
            return float(raw)
    except ValueError:
        raise ConfigError(f"{key}: cannot read {raw!r} as {tp.__name__}") from None
    return raw


def typed_fields(*classes) -> dict[str, object]:
    out = {}
    for cls in classes:
        hints = typing.get_type_hints(cls)
        for f in dataclasses.fields(cls):
            if not dataclasses.is_dataclass(hints[f.name]):
                out.setdefault(f.name, hints[f.name])
    return out


def coerce_config(raw: dict[str, str], *classes) -> dict[str, object]:
    """Typed values for ``raw``; keys unknown to every class are rejected."""
    types = typed_fields(*classes)
    unknown = sorted(set(raw) - set(types))
    if unknown:
        raise ConfigError(f"unknown config key(s) {unknown}; known keys: {sorted(types)}")
    return {k: _coerce(v, types[k], k) for k, v in raw.items()}


def pick(values: dict, cls) -> dict:
    names = {f.name for f in dataclasses.fields(cls)}
    return {k: v for k, v in values.items() if k in names}
