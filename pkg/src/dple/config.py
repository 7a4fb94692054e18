"""Flat key=value config files.

One `key = value` per line, `#` starts a comment, blank lines ignored.
Unknown keys are rejected; missing keys take the TrainConfig defaults.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .errors import ConfigError
from .learn import TrainConfig

_FIELDS = {f.name: f.type for f in dataclasses.fields(TrainConfig)}
_BOOLS = {"true": True, "false": False, "1": True, "0": False,
          "yes": True, "no": False}


def _coerce(key: str, raw: str):
    kind = _FIELDS[key]
    try:
        if kind == "bool":
            flag = _BOOLS.get(raw.lower())
            if flag is None:
                raise ValueError(raw)
            return flag
        if kind == "int":
            return int(raw)
        if kind == "float":
            return float(raw)
        return raw
    except ValueError as exc:
        raise ConfigError(f"bad value for {key!r}: {raw!r}") from exc


def parse_config(text: str) -> TrainConfig:
    values = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, raw = (s.strip() for s in line.split("=", 1))
        if key not in _FIELDS:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        if key in values:
            raise ConfigError(f"line {lineno}: duplicate key {key!r}")
        values[key] = _coerce(key, raw)
    cfg = TrainConfig(**values)
    cfg.validate()
    return cfg


def load_config(path) -> TrainConfig:
    return parse_config(Path(path).read_text())


def serialize_config(cfg: TrainConfig) -> str:
    """Canonical text form (sorted keys); parse_config round-trips it."""
    lines = []
    for name in sorted(_FIELDS):
        value = getattr(cfg, name)
        if isinstance(value, bool):
            value = "true" if value else "false"
        elif isinstance(value, float):
            value = repr(value)
        lines.append(f"{name} = {value}")
    return "\n".join(lines) + "\n"
