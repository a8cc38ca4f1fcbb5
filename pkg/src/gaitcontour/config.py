"""Experiment configuration: one JSON document, strictly validated."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .features import AugmentConfig, ChannelSpec
from .geometry import ApproxConfig
from .model import ModelConfig
from .training import TripletConfig


@dataclass(frozen=True)
class DataSplit:
    """A directory of ``.cpz`` files, optionally filtered by a file-name glob."""

    dir: str = ""
    include: str = "*.cpz"


@dataclass(frozen=True)
class DataConfig:
    train: DataSplit = field(default_factory=DataSplit)
    gallery: DataSplit = field(default_factory=DataSplit)
    probe: DataSplit = field(default_factory=DataSplit)


@dataclass(frozen=True)
class EvalConfig:
    frames: int | None = None  # None: use the full sequence
    ks: tuple = (1, 5, 10)
    far_points: tuple = (1e-2, 1e-1)
    aggregate: bool = False  # average the gallery into one template per subject

    def __post_init__(self):
        if self.frames is not None and self.frames < 1:
            raise ValueError("frames must be >= 1")


@dataclass(frozen=True)
class ExperimentConfig:
    data: DataConfig = field(default_factory=DataConfig)
    approx: ApproxConfig = field(default_factory=ApproxConfig)
    channels: ChannelSpec = field(default_factory=ChannelSpec)
    augment: AugmentConfig = field(default_factory=AugmentConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    triplet: TripletConfig = field(default_factory=TripletConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    seed: int | None = None  # when set, overrides every component seed

    def seeded(self) -> "ExperimentConfig":
        """Apply the global ``seed`` to model init, batch sampling and augmentation."""
        if self.seed is None:
            return self
        return dataclasses.replace(
            self,
            model=dataclasses.replace(self.model, init_seed=self.seed),
            triplet=dataclasses.replace(self.triplet, seed=self.seed),
            augment=dataclasses.replace(self.augment, rng_seed=self.seed),
        )


def _build(cls, doc, path: str):
    if not dataclasses.is_dataclass(cls):
        return doc
    if not isinstance(doc, dict):
        raise ConfigError(f"{path or 'config'}: expected an object, got {type(doc).__name__}")
    fields = {f.name: f for f in dataclasses.fields(cls)}
    unknown = sorted(set(doc) - set(fields))
    if unknown:
        raise ConfigError(f"{path or 'config'}: unknown key(s) {', '.join(unknown)}")
    kwargs = {}
    for name, value in doc.items():
        default = fields[name].default_factory() if fields[name].default_factory is not dataclasses.MISSING \
            else fields[name].default
        sub = f"{path}.{name}" if path else name
        if dataclasses.is_dataclass(default):
            kwargs[name] = _build(type(default), value, sub)
        elif isinstance(default, tuple):
            if not isinstance(value, list):
                raise ConfigError(f"{sub}: expected a list")
            kwargs[name] = tuple(value)
        else:
            _check_type(default, value, sub)
            kwargs[name] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{path or 'config'}: {exc}") from exc


def _check_type(default, value, path: str) -> None:
    if default is None or value is None:
        return
    if isinstance(default, bool):
        ok = isinstance(value, bool)
    elif isinstance(default, float):
        ok = isinstance(value, (int, float)) and not isinstance(value, bool)
    elif isinstance(default, int):
        ok = isinstance(value, int) and not isinstance(value, bool)
    else:
        ok = isinstance(value, type(default))
    if not ok:
        raise ConfigError(f"{path}: expected {type(default).__name__}, got {value!r}")


def config_from_dict(doc: dict) -> ExperimentConfig:
    return _build(ExperimentConfig, doc, "")


def load_config(path: str | Path) -> ExperimentConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return config_from_dict(doc)


def config_to_dict(cfg) -> dict:
    def conv(v):
        if isinstance(v, tuple):
            return [conv(x) for x in v]
        return v

    return {k: conv(v) for k, v in dataclasses.asdict(cfg).items()}
