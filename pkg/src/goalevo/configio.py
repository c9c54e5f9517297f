"""Plain-text ``key = value`` config files and string-to-field coercion."""

from __future__ import annotations

import dataclasses
from pathlib import Path


class ConfigError(ValueError):
    """Invalid configuration (bad key, bad value, impossible combination)."""


def parse_kv_text(text: str) -> dict[str, str]:
    """Parse ``key = value`` lines; '#' starts a comment, blank lines ignored."""
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected 'key = value', got {raw!r}")
        key, value = line.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError(f"line {lineno}: empty key")
        out[key] = value.strip()
    return out


def parse_kv_file(path: str | Path) -> dict[str, str]:
    return parse_kv_text(Path(path).read_text())


def parse_bool(value: str) -> bool:
    v = value.strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ConfigError(f"not a boolean: {value!r}")


def coerce_value(value: str, typ) -> object:
    """Coerce a config string to a dataclass field type."""
    if typ is bool or typ == "bool":
        return parse_bool(value)
    if typ is int or typ == "int":
        return int(value)
    if typ is float or typ == "float":
        return float(value)
    if typ is str or typ == "str":
        return value
    name = str(typ)
    if name.startswith("tuple[int") or name.startswith("typing.Tuple[int"):
        return tuple(int(p) for p in value.split(",") if p.strip())
    if name.startswith("tuple[float") or name.startswith("typing.Tuple[float"):
        return tuple(float(p) for p in value.split(",") if p.strip())
    raise ConfigError(f"unsupported config field type {typ!r}")


def apply_overrides(instance, overrides: dict[str, str]):
    """Return a dataclass copy with string overrides coerced onto its fields.

    Unknown keys raise ConfigError so typos in config files fail loudly.
    """
    field_types = {f.name: f.type for f in dataclasses.fields(instance)}
    updates = {}
    for key, value in overrides.items():
        if key not in field_types:
            raise ConfigError(
                f"unknown config key {key!r} for {type(instance).__name__}"
            )
        try:
            updates[key] = coerce_value(value, field_types[key])
        except ConfigError:
            raise
        except ValueError as exc:
            raise ConfigError(f"bad value for {key!r}: {value!r} ({exc})") from exc
    return dataclasses.replace(instance, **updates)
