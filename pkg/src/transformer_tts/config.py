"""Flat ``key=value`` configuration files covering model and training settings."""

from __future__ import annotations

import dataclasses
from pathlib import Path

from .model import ModelConfig
from .tensor import ConfigError
from .training import TrainConfig

PRESETS = {"toy": (ModelConfig.toy, TrainConfig.toy), "paper": (ModelConfig.paper, TrainConfig)}


def _coerce(raw: str, default):
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("1", "true", "yes", "on"):
            return True
        if low in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


def parse_config_text(text: str) -> dict[str, str]:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    out = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key=value, got {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def build_configs(values: dict[str, str], vocab_size: int | None = None):
    """Turn raw strings into ``(ModelConfig, TrainConfig)``; ``preset`` picks the base."""
    values = dict(values)
    preset = values.pop("preset", "toy")
    if preset not in PRESETS:
        raise ConfigError(f"unknown preset {preset!r}; choose from {sorted(PRESETS)}")
    make_model, make_train = PRESETS[preset]
    model_defaults = make_model()
    if vocab_size is not None:
        model_defaults = dataclasses.replace(model_defaults, vocab_size=vocab_size)
    model_fields = {f.name: getattr(model_defaults, f.name)
                    for f in dataclasses.fields(ModelConfig)}
    train_fields = make_train().to_dict()
    model_kw, train_kw = {}, {}
    for key, raw in values.items():
        try:
            if key in model_fields:
                model_kw[key] = _coerce(raw, model_fields[key])
            elif key in train_fields:
                train_kw[key] = _coerce(raw, train_fields[key])
            else:
                raise ConfigError(f"unknown config key {key!r}")
        except ValueError as exc:
            if isinstance(exc, ConfigError):
                raise
            raise ConfigError(f"bad value for {key}: {raw!r}") from None
    model_cfg = dataclasses.replace(model_defaults, **model_kw)
    model_cfg.validate()
    try:
        train_cfg = make_train(**train_kw)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    return model_cfg, train_cfg


def load_config(path, vocab_size: int | None = None):
    return build_configs(parse_config_text(Path(path).read_text(encoding="utf-8")), vocab_size)


def format_config(model_cfg: ModelConfig, train_cfg: TrainConfig) -> str:
    lines = [f"{k}={v}" for k, v in model_cfg.to_dict().items()]
    lines += [f"{k}={v}" for k, v in train_cfg.to_dict().items()]
    return "\n".join(lines) + "\n"


def write_config(path, model_cfg: ModelConfig, train_cfg: TrainConfig) -> Path:
    path = Path(path)
    path.write_text(format_config(model_cfg, train_cfg), encoding="utf-8")
    return path
