"""Flat ``key = value`` config files mapped onto dataclasses.

Blank lines and ``#`` comments are ignored. Values are parsed by the field's
declared type; unknown keys and malformed values are errors.
"""

from __future__ import annotations

import dataclasses
import typing
from pathlib import Path


class ConfigError(ValueError):
    pass


_TRUE = {"true", "yes", "on", "1"}
_FALSE = {"false", "no", "off", "0"}


def _parse(raw: str, typ, key: str):
    try:
        if typ is bool:
            v = raw.lower()
            if v in _TRUE:
                return True
            if v in _FALSE:
                return False
            raise ValueError(raw)
        if typ is int:
            return int(raw)
        if typ is float:
            return float(raw)
        if typ is str:
            return raw
    except ValueError:
        raise ConfigError(f"{key}: cannot parse {raw!r} as {typ.__name__}") from None
    raise ConfigError(f"{key}: unsupported field type {typ!r}")


def parse_pairs(text: str, source: str = "<text>") -> dict[str, str]:
    out: dict[str, str] = {}
    for n, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{n}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{n}: empty key")
        if key in out:
            raise ConfigError(f"{source}:{n}: duplicate key {key!r}")
        out[key] = value
    return out


def apply(cls, pairs: dict[str, str], base=None):
    """Instance of dataclass ``cls`` (or a copy of ``base``) with ``pairs`` applied."""
    hints = typing.get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(pairs) - names)
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    values = {k: _parse(v, hints[k], k) for k, v in pairs.items()}
    return dataclasses.replace(base if base is not None else cls(), **values)


def load(cls, path=None, overrides: list[str] | None = None):
    pairs = parse_pairs(Path(path).read_text(encoding="utf-8"), str(path)) if path else {}
    for item in overrides or []:
        extra = parse_pairs(item, "--set")
        pairs.update(extra)
    return apply(cls, pairs)


def dump(obj) -> str:
    lines = []
    for f in dataclasses.fields(obj):
        v = getattr(obj, f.name)
        if isinstance(v, bool):
            v = "true" if v else "false"
        elif isinstance(v, float):
            v = repr(v)
        lines.append(f"{f.name} = {v}")
    return "\n".join(lines) + "\n"
