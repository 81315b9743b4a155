"""Declarative run configuration from a single YAML file.

Top-level keys mirror ExperimentConfig: seed, rounds, train_size,
eval_size, plus nested synth, harvest, blend, augment, and model
sections and an optional sweep list. Unknown keys are rejected so typos
fail loudly instead of silently using defaults.
"""

from __future__ import annotations

import dataclasses
from typing import Dict, Optional

import yaml

from .augmentor import AugmentConfig
from .blender import BlendConfig
from .errors import ConfigError
from .experiment import ExperimentConfig
from .harvester import HarvestCriteria
from .synthgen import SynthConfig
from .toycam import ModelConfig

_SECTIONS = {
    "synth": SynthConfig,
    "harvest": HarvestCriteria,
    "blend": BlendConfig,
    "augment": AugmentConfig,
    "model": ModelConfig,
}
_SCALARS = ("seed", "rounds", "train_size", "eval_size")


def _build_section(cls, data: dict, where: str):
    if not isinstance(data, dict):
        raise ConfigError(f"[{where}] must be a mapping")
    field_map = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in data.items():
        if key not in field_map:
            raise ConfigError(f"[{where}] unknown key {key!r}")
        current = field_map[key]
        if isinstance(value, list):
            value = tuple(value)
        kwargs[current.name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{where}] {exc}") from exc


def config_from_dict(data: Optional[dict]) -> ExperimentConfig:
    """Build an ExperimentConfig from parsed YAML (None means defaults)."""
    data = dict(data or {})
    known = set(_SCALARS) | set(_SECTIONS) | {"sweep"}
    for key in data:
        if key not in known:
            raise ConfigError(f"unknown top-level key {key!r}")

    sections = {}
    for name, cls in _SECTIONS.items():
        if name in data:
            sections[name] = _build_section(cls, data[name], name)
    # The blend section nests inside the augment config.
    blend = sections.pop("blend", None)
    if blend is not None:
        augment = sections.get("augment", AugmentConfig())
        sections["augment"] = dataclasses.replace(augment, blend=blend)

    kwargs: Dict[str, object] = {k: data[k] for k in _SCALARS if k in data}
    kwargs.update(sections)

    if "sweep" in data:
        sweep = data["sweep"]
        if not isinstance(sweep, list):
            raise ConfigError("[sweep] must be a list")
        points = []
        for i, point in enumerate(sweep):
            if (not isinstance(point, dict) or "name" not in point
                    or "set" not in point or not isinstance(point["set"], dict)):
                raise ConfigError(
                    f"[sweep] entry {i} needs 'name' and a 'set' mapping")
            extra = set(point) - {"name", "set"}
            if extra:
                raise ConfigError(
                    f"[sweep] entry {i} has unknown keys {sorted(extra)}")
            points.append((str(point["name"]),
                           tuple(sorted(point["set"].items()))))
        kwargs["sweep"] = tuple(points)

    try:
        return ExperimentConfig(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path: str) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            data = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"config file is not valid YAML: {exc}") from exc
    if data is not None and not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return config_from_dict(data)
