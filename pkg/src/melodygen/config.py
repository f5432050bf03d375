"""Flat key=value configuration files shared by all CLI commands."""

from __future__ import annotations

from dataclasses import fields

from .pipeline import PipelineConfig
from .training import TrainConfig


class ConfigError(Exception):
    pass


def parse_kv_file(path):
    """Lines of key=value; blank lines and #-comments ignored."""
    out = {}
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, _, value = line.partition("=")
            out[key.strip()] = value.strip()
    return out


def _coerce(raw, target_type):
    if target_type is bool:
        return raw.lower() in ("1", "true", "yes")
    return target_type(raw)


def apply_to_dataclass(values, instance, consumed=None):
    """Set matching dataclass fields from a string dict; returns leftovers."""
    names = {f.name: f.type for f in fields(instance)}
    types = {f.name: type(getattr(instance, f.name)) for f in fields(instance)}
    leftover = {}
    for key, raw in values.items():
        if key in names:
            try:
                setattr(instance, key, _coerce(raw, types[key]))
            except ValueError:
                raise ConfigError(f"bad value for {key}: {raw!r}")
            if consumed is not None:
                consumed.add(key)
        else:
            leftover[key] = raw
    return leftover


def load_configs(path):
    """Parse one file into (PipelineConfig, TrainConfig); unknown keys fail."""
    pipeline = PipelineConfig()
    train = TrainConfig()
    if path is None:
        return pipeline, train
    values = parse_kv_file(path)
    consumed = set()
    apply_to_dataclass(values, pipeline, consumed)
    apply_to_dataclass(values, train, consumed)
    unknown = set(values) - consumed
    if unknown:
        raise ConfigError(f"unknown config key: {sorted(unknown)[0]}")
    return pipeline, train
