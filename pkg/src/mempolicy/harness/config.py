"""Training configuration, loaded from and written to YAML."""

from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np
import yaml

from ..errors import ConfigError

PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class TrainConfig:
    task: str = "seq_push_buttons"
    batch_size: int = 32
    learning_rate: float = 1e-3
    total_steps: int = 2000
    memory_capacity: int = 16
    chunk_length: int = 16
    # memory flags, one per ablation axis
    use_perceptual: bool = True
    use_cognitive: bool = True
    use_timestep_pe: bool = True
    fusion: str = "gate"
    consolidation: str = "merge"
    # seeds: parameters/noise, demonstrations, evaluation layouts
    seed: int = 0
    data_seed: int = 0
    eval_seed: int = 1000
    n_demos: int = 200
    precision: str = "float32"
    # model sizes
    n_p: int = 4
    d_p: int = 64
    d_c: int = 64
    d_model: int = 64
    n_blocks: int = 3
    n_heads: int = 4
    heads_perceptual: int = 4
    heads_cognitive: int = 1
    # diffusion
    diffusion_steps: int = 100
    repeats: int = 4
    p_uncond: float = 0.1
    sample_steps: int = 10
    cfg_scale: float = 1.5
    grad_clip: float = 1.0
    # validation and evaluation
    val_every: int = 500
    val_trials: int = 20
    ensemble: str = "off"
    ensemble_alpha: float = 0.1
    exec_horizon: int = 0  # 0: use the task's default

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.batch_size < 1:
            raise ConfigError("batch_size must be >= 1")
        if self.total_steps < 0:
            raise ConfigError("total_steps must be >= 0")
        if self.memory_capacity < 1:
            raise ConfigError("memory_capacity must be >= 1")
        if self.fusion not in ("gate", "add"):
            raise ConfigError(f"fusion must be gate or add, got {self.fusion!r}")
        if self.consolidation not in ("merge", "fifo"):
            raise ConfigError(f"consolidation must be merge or fifo, got {self.consolidation!r}")
        if self.precision not in PRECISIONS:
            raise ConfigError(f"precision must be one of {sorted(PRECISIONS)}")
        if self.ensemble not in ("off", "adaptive"):
            raise ConfigError(f"ensemble must be off or adaptive, got {self.ensemble!r}")
        if self.learning_rate <= 0 or self.cfg_scale < 0:
            raise ConfigError("learning_rate must be positive and cfg_scale nonnegative")

    @property
    def dtype(self):
        return PRECISIONS[self.precision]

    @property
    def uses_memory(self) -> bool:
        return self.use_perceptual or self.use_cognitive

    def to_dict(self) -> dict:
        return asdict(self)

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]

    def with_(self, **changes) -> "TrainConfig":
        return replace(self, **changes)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        try:
            return cls(**data)
        except TypeError as exc:
            raise ConfigError(str(exc)) from exc


def load_config(path) -> TrainConfig:
    try:
        data = yaml.safe_load(Path(path).read_text()) or {}
    except (OSError, yaml.YAMLError) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a mapping")
    return TrainConfig.from_dict(data)


def save_config(cfg: TrainConfig, path) -> None:
    Path(path).write_text(yaml.safe_dump(cfg.to_dict(), sort_keys=False))
