"""Flat ``key=value`` config files and coercion into dataclass parameter sets."""

from __future__ import annotations

import dataclasses
import hashlib
from pathlib import Path
from typing import Any, TypeVar, get_type_hints

from .errors import ValidationError

T = TypeVar("T")


def parse_kv(text: str) -> dict[str, str]:
    out: dict[str, str] = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValidationError(f"line {lineno}: expected key=value, got {raw!r}")
        key, value = line.split("=", 1)
        out[key.strip().replace("-", "_")] = value.strip()
    return out


def read_kv(path: str | Path) -> dict[str, str]:
    return parse_kv(Path(path).read_text())


def _fmt(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, (tuple, list)):
        return ",".join(_fmt(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def dump_kv(obj) -> str:
    items = dataclasses.asdict(obj) if dataclasses.is_dataclass(obj) else dict(obj)
    return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(items.items()))


def write_kv(obj, path: str | Path) -> None:
    Path(path).write_text(dump_kv(obj))


def _coerce(text: str, typ) -> Any:
    name = getattr(typ, "__name__", str(typ))
    if typ is bool or name == "bool":
        low = text.lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ValidationError(f"not a boolean: {text!r}")
    if typ is int or name == "int":
        return int(text)
    if typ is float or name == "float":
        return float(text)
    if "tuple" in str(typ):
        return tuple(float(p) for p in text.split(","))
    return text


def from_kv(cls: type[T], values: dict[str, Any], strict: bool = True) -> T:
    """Build dataclass ``cls`` from string (or already typed) values."""
    hints = get_type_hints(cls)
    names = {f.name for f in dataclasses.fields(cls)}
    unknown = set(values) - names
    if unknown and strict:
        raise ValidationError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    kwargs = {}
    for key, value in values.items():
        if key not in names:
            continue
        kwargs[key] = _coerce(value, hints[key]) if isinstance(value, str) else value
    return cls(**kwargs)


def params_hash(obj) -> str:
    return hashlib.sha256(dump_kv(obj).encode()).hexdigest()[:16]
