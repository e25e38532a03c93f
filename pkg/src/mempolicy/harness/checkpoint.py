"""Checkpoint files: named parameter arrays, normaliser, config and optimiser state.

Stored as a single ``.npz``; the ``meta`` entry is a JSON header carrying
the format name and version, so arrays reload bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ..action_expert import ActionNormalizer
from ..errors import ConfigError, DataError
from .config import TrainConfig
from .policy import Policy

FORMAT = "mempolicy-checkpoint"
VERSION = 1


@dataclass
class Checkpoint:
    policy: Policy
    step: int = 0
    optimizer: dict | None = None
    extra: dict = field(default_factory=dict)

    @property
    def config(self) -> TrainConfig:
        return self.policy.cfg


def save_checkpoint(path, ckpt: Checkpoint) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    pol = ckpt.policy
    meta = {
        "format": FORMAT,
        "version": VERSION,
        "config": pol.cfg.to_dict(),
        "step": int(ckpt.step),
        "extra": ckpt.extra,
    }
    arrays = {"meta": np.array(json.dumps(meta, sort_keys=True))}
    for name, arr in pol.state_dict().items():
        arrays[f"param/{name}"] = arr
    arrays["norm/mean"] = pol.normalizer.mean
    arrays["norm/std"] = pol.normalizer.std
    arrays["obs/mean"] = pol.obs_normalizer.mean
    arrays["obs/std"] = pol.obs_normalizer.std
    for key, arr in (ckpt.optimizer or {}).items():
        arrays[f"adam/{key}"] = np.asarray(arr)
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> Checkpoint:
    try:
        data = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "meta" not in data.files:
            raise DataError(f"{path} is not a checkpoint")
        meta = json.loads(str(data["meta"]))
        if meta.get("format") != FORMAT or meta.get("version") != VERSION:
            raise DataError(f"unsupported checkpoint header {meta.get('format')} v{meta.get('version')}")
        cfg = TrainConfig.from_dict(meta["config"])
        norm = ActionNormalizer(data["norm/mean"], data["norm/std"])
        if "obs/mean" not in data.files:
            raise DataError(f"{path} lacks observation statistics")
        policy = Policy(cfg, norm, ActionNormalizer(data["obs/mean"], data["obs/std"]))
        params = {k[len("param/"):]: data[k] for k in data.files if k.startswith("param/")}
        try:
            policy.load_state_dict(params)
        except ConfigError as exc:
            raise DataError(str(exc)) from exc
        opt = {k[len("adam/"):]: data[k] for k in data.files if k.startswith("adam/")} or None
    return Checkpoint(policy, meta["step"], opt, meta.get("extra", {}))
