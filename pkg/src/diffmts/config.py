"""Run configuration: one JSON document for data, model, training, sampling and evaluation.

Unknown keys are rejected at every level. Missing keys take the dataclass
defaults, so ``{}`` is a valid config.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ConfigError
from .model import ModelConfig
from .train import TrainConfig


@dataclass
class DataConfig:
    path: str | None = None
    window_length: int = 48
    stride: int = 1
    eval_stride: int = 1
    rul_cap: float = 125.0

    def __post_init__(self):
        if self.window_length < 1 or self.stride < 1 or self.eval_stride < 1:
            raise ConfigError("window_length, stride and eval_stride must be >= 1")
        if self.rul_cap <= 0:
            raise ConfigError("rul_cap must be positive")


@dataclass
class SampleConfig:
    seed: int = 0
    batch_size: int = 64
    guidance_off: bool = False

    def __post_init__(self):
        if self.batch_size < 1:
            raise ConfigError("sample batch_size must be >= 1")


@dataclass
class EvalConfig:
    seeds: list = field(default_factory=lambda: [0, 1, 2, 3, 4])
    epochs: int = 40
    hidden: int = 32
    layers: int = 2
    batch_size: int = 32
    lr: float = 1e-3
    jobs: int = 1

    def __post_init__(self):
        self.seeds = [int(s) for s in self.seeds]
        if not self.seeds:
            raise ConfigError("eval seed list must not be empty")
        if min(self.epochs, self.hidden, self.layers, self.batch_size, self.jobs) < 1:
            raise ConfigError("eval epochs, hidden, layers, batch_size and jobs must be >= 1")


SECTIONS = {"data": DataConfig, "model": ModelConfig, "train": TrainConfig, "sample": SampleConfig, "eval": EvalConfig}


@dataclass
class RunConfig:
    data: DataConfig = field(default_factory=DataConfig)
    model: ModelConfig = field(default_factory=ModelConfig)
    train: TrainConfig = field(default_factory=TrainConfig)
    sample: SampleConfig = field(default_factory=SampleConfig)
    eval: EvalConfig = field(default_factory=EvalConfig)

    def __post_init__(self):
        if self.model.length != self.data.window_length:
            raise ConfigError(
                f"model.length ({self.model.length}) must equal data.window_length ({self.data.window_length})"
            )

    def to_dict(self) -> dict:
        out = {}
        for name in SECTIONS:
            d = dataclasses.asdict(getattr(self, name))
            out[name] = json.loads(json.dumps(d))
        return out

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":")).encode()
        return hashlib.sha256(blob).hexdigest()


def _build(cls, values: dict, where: str):
    if not isinstance(values, dict):
        raise ConfigError(f"{where} must be a JSON object")
    known = {f.name for f in dataclasses.fields(cls)}
    unknown = sorted(set(values) - known)
    if unknown:
        raise ConfigError(f"unknown config key(s) in {where}: {', '.join(unknown)}")
    try:
        return cls(**values)
    except TypeError as exc:
        raise ConfigError(f"{where}: {exc}") from exc


def from_dict(doc: dict) -> RunConfig:
    if not isinstance(doc, dict):
        raise ConfigError("config must be a JSON object")
    unknown = sorted(set(doc) - set(SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config key(s): {', '.join(unknown)}")
    doc = dict(doc)
    # the window length doubles as the model length unless both are given
    data = dict(doc.get("data", {}))
    model = dict(doc.get("model", {}))
    if "window_length" in data and "length" not in model:
        model["length"] = data["window_length"]
    elif "length" in model and "window_length" not in data:
        data["window_length"] = model["length"]
    doc["data"], doc["model"] = data, model
    parts = {name: _build(cls, doc.get(name, {}), name) for name, cls in SECTIONS.items()}
    return RunConfig(**parts)


def load(path) -> RunConfig:
    try:
        doc = json.loads(Path(path).read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc})") from exc
    return from_dict(doc)


def with_overrides(cfg: RunConfig, overrides: dict) -> RunConfig:
    """Apply ``{"section.key": value}`` overrides and re-validate."""
    doc = cfg.to_dict()
    for dotted, value in overrides.items():
        section, _, key = dotted.partition(".")
        if section not in SECTIONS or not key:
            raise ConfigError(f"unknown override {dotted!r}")
        doc[section][key] = value
    if "data.window_length" in overrides and "model.length" not in overrides:
        doc["model"]["length"] = overrides["data.window_length"]
    return from_dict(doc)


def schema() -> dict:
    """A JSON schema describing the config document (types and defaults)."""

    def kind(v):
        if isinstance(v, bool):
            return {"type": "boolean"}
        if isinstance(v, int):
            return {"type": "integer"}
        if isinstance(v, float):
            return {"type": "number"}
        if isinstance(v, str):
            return {"type": "string"}
        if isinstance(v, (list, tuple)):
            return {"type": "array"}
        return {}

    props = {}
    defaults = RunConfig().to_dict()
    for name, cls in SECTIONS.items():
        fields = {}
        for f in dataclasses.fields(cls):
            dv = defaults[name][f.name]
            entry = kind(dv)
            entry["default"] = dv
            fields[f.name] = entry
        props[name] = {"type": "object", "additionalProperties": False, "properties": fields}
    return {"type": "object", "additionalProperties": False, "properties": props}
