"""Plain-text training configs and ablation matrices.

A config file holds ``key = value`` lines naming :class:`TrainConfig` fields;
``#`` starts a comment. Booleans accept true/false/yes/no/on/off/1/0.

A matrix file holds one row per line, ``label: key=value key=value ...``,
each row overriding the base config. A row with nothing after the colon
runs the base config unchanged.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .trainer import TrainConfig


class ConfigError(ValueError):
    pass


_FIELDS = {f.name: f for f in dataclasses.fields(TrainConfig)}
_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(key: str, raw: str, where: str):
    if key not in _FIELDS:
        raise ConfigError(f"{where}unknown config key {key!r}")
    default = getattr(TrainConfig(), key)
    raw = raw.strip()
    if isinstance(default, bool):
        low = raw.lower()
        if low in _TRUE:
            return True
        if low in _FALSE:
            return False
        raise ConfigError(f"{where}{key} expects a boolean, got {raw!r}")
    try:
        if isinstance(default, int):
            return int(raw)
        if isinstance(default, float):
            return float(raw)
    except ValueError:
        kind = "an integer" if isinstance(default, int) else "a number"
        raise ConfigError(f"{where}{key} expects {kind}, got {raw!r}") from None
    return raw


def _build(base: TrainConfig, changes: dict, where: str) -> TrainConfig:
    try:
        return dataclasses.replace(base, **changes)
    except ValueError as exc:
        raise ConfigError(f"{where}{exc}") from None


def parse_config(text: str, base: TrainConfig | None = None) -> TrainConfig:
    changes = {}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value, got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        changes[key] = _coerce(key, value, f"line {lineno}: ")
    return _build(base or TrainConfig(), changes, "")


def load_config(path, base: TrainConfig | None = None) -> TrainConfig:
    return parse_config(Path(path).read_text(), base)


def parse_matrix(text: str, base: TrainConfig | None = None):
    """Rows of ``(label, TrainConfig)`` in file order."""
    base = base or TrainConfig()
    rows, seen = [], set()
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        where = f"line {lineno}: "
        if ":" not in line:
            raise ConfigError(f"{where}matrix rows look like 'label: key=value ...', got {line!r}")
        label, rest = (s.strip() for s in line.split(":", 1))
        if not label or "," in label:
            raise ConfigError(f"{where}row label must be non-empty and comma-free")
        if label in seen:
            raise ConfigError(f"{where}duplicate row label {label!r}")
        seen.add(label)
        changes = {}
        for tok in rest.split():
            if "=" not in tok:
                raise ConfigError(f"{where}expected key=value, got {tok!r}")
            k, v = tok.split("=", 1)
            changes[k] = _coerce(k, v, where)
        rows.append((label, _build(base, changes, where)))
    if not rows:
        raise ConfigError("matrix has no rows")
    return rows


def load_matrix(path, base: TrainConfig | None = None):
    return parse_matrix(Path(path).read_text(), base)


def format_config(cfg: TrainConfig) -> str:
    """Render a config back to the file format (round-trips through parse_config)."""
    lines = []
    for name in _FIELDS:
        v = getattr(cfg, name)
        lines.append(f"{name} = {str(v).lower() if isinstance(v, bool) else v}")
    return "\n".join(lines) + "\n"
