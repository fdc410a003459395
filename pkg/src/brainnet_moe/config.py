"""Flat key-value run configuration shared by the CLI commands.

A config file is one JSON object whose keys are the field names of
:class:`ModelConfig`, :class:`TrainConfig`, :class:`LossWeights` and
:class:`SynthSpec` (plus ``test_fraction``). Keys shared between them, such as
``seed`` and ``n_regions``, feed every owner.
"""
from __future__ import annotations

import difflib
import json
from dataclasses import MISSING, fields
from pathlib import Path

from .data_synth import SynthSpec
from .losses import LossWeights
from .model import ModelConfig
from .train_eval import TrainConfig

_OWNERS = (ModelConfig, TrainConfig, LossWeights, SynthSpec)
_SKIP = {"loss", "raw"}
EXTRA_KEYS = {"test_fraction": 0.2}

# common spellings that difflib alone ranks poorly
ALIASES = {
    "n_expert": "experts_per_group", "n_experts": "experts_per_group", "num_experts": "experts_per_group",
    "experts": "experts_per_group", "hidden_dim": "expert_hidden", "d_model": "model_dim",
    "num_layers": "transformer_layers", "n_layers": "transformer_layers", "learning_rate": "lr",
    "lambda": "lam", "batch": "batch_size", "regions": "n_regions", "classes": "n_classes",
}


class ConfigError(ValueError):
    """Unknown or ill-typed configuration key."""


def _field_default(f):
    if f.default is not MISSING:
        return f.default
    if f.default_factory is not MISSING:
        return f.default_factory()
    return None


def known_keys() -> dict:
    """Every accepted key mapped to its default value."""
    keys = {}
    for owner in _OWNERS:
        for f in fields(owner):
            if f.name not in _SKIP:
                keys.setdefault(f.name, _field_default(f))
    keys.update(EXTRA_KEYS)
    return keys


def synth_only_keys() -> set:
    shared = {f.name for owner in (ModelConfig, TrainConfig, LossWeights) for f in fields(owner)}
    return {f.name for f in fields(SynthSpec)} - shared


def suggest(key: str) -> str | None:
    if key in ALIASES:
        return ALIASES[key]
    close = difflib.get_close_matches(key, list(known_keys()), n=1, cutoff=0.6)
    return close[0] if close else None


def validate_keys(values: dict) -> None:
    keys = known_keys()
    for key in values:
        if key not in keys:
            hint = suggest(key)
            msg = f"unknown config key {key!r}"
            if hint:
                msg += f"; did you mean {hint!r}?"
            raise ConfigError(msg)


def load_config_file(path) -> dict:
    try:
        data = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError(f"config file {path} must hold a flat JSON object")
    for k, v in data.items():
        if isinstance(v, dict):
            raise ConfigError(f"config key {k!r} must be a scalar or list (the format is flat)")
    validate_keys(data)
    return data


def resolve(file_values: dict | None = None, overrides: dict | None = None) -> dict:
    """Defaults, then file values, then non-``None`` overrides."""
    merged = known_keys()
    for src in (file_values or {}, overrides or {}):
        validate_keys(src)
        merged.update({k: v for k, v in src.items() if v is not None})
    return merged


def _pick(owner, values: dict) -> dict:
    return {f.name: values[f.name] for f in fields(owner) if f.name not in _SKIP and f.name in values}


def build_model_config(values: dict, n_regions: int | None = None, n_classes: int | None = None) -> ModelConfig:
    kw = _pick(ModelConfig, values)
    if n_regions is not None:
        kw["n_regions"] = n_regions
    if n_classes is not None:
        kw["n_classes"] = n_classes
    return ModelConfig(loss=LossWeights(**_pick(LossWeights, values)), **kw)


def build_train_config(values: dict) -> TrainConfig:
    return TrainConfig(**_pick(TrainConfig, values))


def build_synth_spec(values: dict) -> SynthSpec:
    return SynthSpec(**_pick(SynthSpec, values))
