"""Run configuration: nested dataclasses, JSON round-trip, dotted-path overrides."""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

from .objective import LossConfig
from .regulator import RegulatorConfig
from .snn import LifConfig, default_layers


class ConfigError(ValueError):
    def __init__(self, path: str, msg: str):
        self.path = path
        super().__init__(f"{path}: {msg}")


@dataclass
class ModelConfig:
    input_shape: list = field(default_factory=lambda: [1, 8, 8])
    channels: list = field(default_factory=lambda: [8, 16])
    hidden: int = 64
    lif: LifConfig = field(default_factory=LifConfig)
    regulator: RegulatorConfig = field(default_factory=RegulatorConfig)
    gate_temperature: float = 1.0
    selection_init_std: float = 0.01


@dataclass
class OptimConfig:
    lr: float = 1e-3
    lr_selection: Optional[float] = None
    lr_embedding: Optional[float] = None
    lr_repair_embedding: float = 1e-2     # repaired task's x_T during injury repair
    eps: float = 1e-8
    eps_selection: float = 1e-3
    batch_size: int = 32
    epochs: int = 50
    repair_epochs: int = 150
    eval_every: int = 1


@dataclass
class TasksConfig:
    source: str = "synthetic"
    n_tasks: int = 5
    classes_per_task: int = 2
    dim: int = 64
    separation: float = 1.0
    noise: float = 0.15
    n_train: int = 64
    n_test: int = 64
    data_seed: Optional[int] = None
    format: str = "idx"
    train_path: Optional[str] = None
    train_labels: Optional[str] = None
    test_path: Optional[str] = None
    test_labels: Optional[str] = None
    manifest: Optional[str] = None


@dataclass
class RunConfig:
    method: str = "sorsnn"
    seed: int = 0
    output_dir: str = "runs/default"
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossConfig = field(default_factory=LossConfig)
    optim: OptimConfig = field(default_factory=OptimConfig)
    tasks: TasksConfig = field(default_factory=TasksConfig)
    injury_fraction: float = 0.5

    def layers(self):
        n_cls = self.tasks.classes_per_task
        return default_layers(tuple(self.model.input_shape), n_cls, tuple(self.model.channels),
                              self.model.hidden)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def _build(cls, data: Any, path: str):
    if not isinstance(data, dict):
        raise ConfigError(path or "<root>", f"expected an object, got {type(data).__name__}")
    names = {f.name for f in dataclasses.fields(cls)}
    defaults = cls()
    kwargs = {}
    for key, val in data.items():
        sub = f"{path}.{key}" if path else key
        if key not in names:
            raise ConfigError(sub, "unknown field")
        default = getattr(defaults, key)
        if dataclasses.is_dataclass(default):
            kwargs[key] = _build(type(default), val, sub)
        else:
            kwargs[key] = _coerce(val, default, sub)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(path or "<root>", str(exc)) from None


def _coerce(val, default, path: str):
    if default is None or val is None:
        return val
    if isinstance(default, bool):
        if not isinstance(val, bool):
            raise ConfigError(path, f"expected a boolean, got {val!r}")
        return val
    if isinstance(default, int):
        if isinstance(val, bool) or not isinstance(val, (int, float)) or int(val) != val:
            raise ConfigError(path, f"expected an integer, got {val!r}")
        return int(val)
    if isinstance(default, float):
        if isinstance(val, bool) or not isinstance(val, (int, float)):
            raise ConfigError(path, f"expected a number, got {val!r}")
        return float(val)
    if isinstance(default, str):
        if not isinstance(val, str):
            raise ConfigError(path, f"expected a string, got {val!r}")
        return val
    if isinstance(default, list):
        if not isinstance(val, list):
            raise ConfigError(path, f"expected a list, got {val!r}")
        return list(val)
    return val


def validate(cfg: RunConfig) -> RunConfig:
    if cfg.method not in ("sorsnn", "naive"):
        raise ConfigError("method", f"must be 'sorsnn' or 'naive', got {cfg.method!r}")
    if cfg.tasks.source not in ("synthetic", "file"):
        raise ConfigError("tasks.source", f"must be 'synthetic' or 'file', got {cfg.tasks.source!r}")
    if cfg.tasks.source == "synthetic" and int(np.prod(cfg.model.input_shape)) != cfg.tasks.dim:
        raise ConfigError("model.input_shape", f"{cfg.model.input_shape} does not hold dim={cfg.tasks.dim}")
    if cfg.tasks.source == "file":
        for key in ("train_path", "test_path", "manifest"):
            if getattr(cfg.tasks, key) is None:
                raise ConfigError(f"tasks.{key}", "required when tasks.source is 'file'")
    if cfg.optim.batch_size < 1:
        raise ConfigError("optim.batch_size", "must be >= 1")
    if cfg.optim.epochs < 0 or cfg.optim.repair_epochs < 0:
        raise ConfigError("optim.epochs", "must be >= 0")
    if cfg.optim.lr < 0:
        raise ConfigError("optim.lr", "must be >= 0")
    if not 0.0 <= cfg.injury_fraction <= 1.0:
        raise ConfigError("injury_fraction", "must lie in [0, 1]")
    if len(cfg.model.channels) != 2:
        raise ConfigError("model.channels", "expected two conv channel counts")
    if len(cfg.model.input_shape) != 3:
        raise ConfigError("model.input_shape", "expected [C, H, W]")
    return cfg


def from_dict(data: dict) -> RunConfig:
    return validate(_build(RunConfig, data, ""))


def _parse_scalar(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def apply_overrides(data: dict, overrides) -> dict:
    """Apply ``a.b.c=value`` strings to a raw config dict (values parsed as JSON when possible)."""
    data = json.loads(json.dumps(data))
    for item in overrides or []:
        if "=" not in item:
            raise ConfigError(item, "override must look like key=value")
        key, text = item.split("=", 1)
        parts = key.strip().split(".")
        node = data
        for p in parts[:-1]:
            node = node.setdefault(p, {})
            if not isinstance(node, dict):
                raise ConfigError(key, f"{p} is not a section")
        node[parts[-1]] = _parse_scalar(text)
    return data


def load_config(path=None, overrides=None) -> RunConfig:
    data = {}
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(str(path), "config file not found")
        try:
            data = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(str(path), f"invalid JSON: {exc}") from None
    return from_dict(apply_overrides(data, overrides))
