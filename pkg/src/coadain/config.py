"""Run configuration: one strict nested YAML document.

Unknown keys are rejected and all schema violations are reported at once,
so a typo in a training config fails loudly instead of being silently
absorbed.  The resolved document is echoed into every run directory.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from .exceptions import ConfigError
from .losses import LossWeights
from .networks import ModelConfig
from .trainer import TrainConfig


@dataclass
class DataConfig:
    train_root: str | None = None
    test_root: str | None = None
    label_map: dict[int, int] = field(default_factory=lambda: {1: 0, 0: 1})
    thermal_min: float = 0.0
    thermal_max: float = 65535.0


@dataclass
class EvalConfig:
    num_sources: int = 100
    num_pairs: int = 1000
    samplings: int = 3
    seed: int = 0


@dataclass
class RunConfig:
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)
    loss: LossWeights = field(default_factory=LossWeights)

    def __post_init__(self):
        # the loss section is authoritative for the trainer's weights
        self.train.loss_weights = self.loss

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


_SECTIONS = {
    "model": ModelConfig,
    "train": TrainConfig,
    "data": DataConfig,
    "eval": EvalConfig,
    "loss": LossWeights,
}


def _build_section(cls, raw: dict, prefix: str, errors: list[str]):
    known = {f.name: f for f in dataclasses.fields(cls)}
    kwargs = {}
    for key, value in raw.items():
        if key not in known:
            errors.append(f"unknown key {prefix}.{key}")
            continue
        if key == "image_size":
            value = tuple(value)
        if key == "label_map":
            value = {int(k): int(v) for k, v in value.items()}
        if key == "loss_weights":
            errors.append(f"set loss weights in the 'loss' section, not {prefix}.{key}")
            continue
        kwargs[key] = value
    try:
        return cls(**kwargs)
    except Exception as exc:
        errors.append(f"section {prefix}: {exc}")
        return cls()


def load_run_config(path: str | Path) -> RunConfig:
    """Parse and validate a run config file; list every offending key."""
    path = Path(path)
    if not path.is_file():
        raise ConfigError(f"config file not found: {path}")
    raw = yaml.safe_load(path.read_text()) or {}
    if not isinstance(raw, dict):
        raise ConfigError(f"config root must be a mapping, got {type(raw).__name__}")
    errors: list[str] = []
    sections = {}
    for key, value in raw.items():
        if key not in _SECTIONS:
            errors.append(f"unknown section {key!r}")
            continue
        if not isinstance(value, dict):
            errors.append(f"section {key!r} must be a mapping")
            continue
        sections[key] = _build_section(_SECTIONS[key], value, key, errors)
    if errors:
        raise ConfigError("invalid config:\n  " + "\n  ".join(errors))
    return RunConfig(**sections)


def dump_run_config(config: RunConfig, path: str | Path) -> None:
    """Echo the resolved config as YAML."""
    doc = config.as_dict()
    doc["model"]["image_size"] = list(doc["model"]["image_size"])
    doc["train"].pop("loss_weights", None)
    Path(path).write_text(yaml.safe_dump(doc, sort_keys=False))
