"""Observation encoder producing the two-stream working memory.

Perceptual stream: a linear lift of the feature vector into ``n_p`` tokens
(one head per token) followed by a squeeze-excitation channel gate.
Cognitive stream: a single summary token from an MLP over the pooled
perceptual tokens and a learned instruction embedding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import numerics as nx
from .errors import ConfigError
from .numerics import Module, Parameter, Tensor


@dataclass
class WorkingMemory:
    perceptual: np.ndarray  # (n_p, d_p)
    cognitive: np.ndarray  # (1, d_c)
    timestep: int


class SqueezeExcite(Module):
    def __init__(self, rng, d: int, reduction: int = 4, dtype=None):
        self.down = nx.Linear(rng, d, max(1, d // reduction), dtype=dtype)
        self.up = nx.Linear(rng, max(1, d // reduction), d, dtype=dtype)

    def gates(self, tokens: Tensor) -> Tensor:
        pooled = tokens.mean(axis=-2, keepdims=True)
        return nx.sigmoid(self.up(nx.relu(self.down(pooled))))

    def __call__(self, tokens: Tensor) -> Tensor:
        return tokens * self.gates(tokens)


def se_gate(tokens, params: SqueezeExcite) -> Tensor:
    """Channel-gate ``tokens`` (…, n_p, d_p) by a squeeze-excitation bottleneck."""
    return params(nx.as_tensor(tokens))


class Encoder(Module):
    def __init__(
        self,
        rng: np.random.Generator,
        obs_dim: int,
        instruction_count: int,
        n_p: int = 4,
        d_p: int = 64,
        d_c: int = 64,
        se_reduction: int = 4,
        hidden: int = 128,
        dtype=None,
    ):
        dtype = dtype or nx.default_dtype()
        self.obs_dim, self.instruction_count = obs_dim, instruction_count
        self.n_p, self.d_p, self.d_c = n_p, d_p, d_c
        self.lift = nx.Linear(rng, obs_dim, n_p * d_p, dtype=dtype)
        self.se = SqueezeExcite(rng, d_p, se_reduction, dtype=dtype)
        self.instr_embed = Parameter(rng.normal(0.0, 0.5, size=(instruction_count, d_c)).astype(dtype))
        self.cog = nx.MLP(rng, d_p + d_c, hidden, d_c, dtype=dtype)

    def forward(self, features, instruction_ids) -> tuple[Tensor, Tensor]:
        """Batched encode: features (B, obs_dim), ids (B,) -> p (B, n_p, d_p), c (B, 1, d_c)."""
        feats = np.asarray(features)
        ids = np.asarray(instruction_ids, dtype=np.int64).reshape(-1)
        if feats.ndim != 2 or feats.shape[1] != self.obs_dim:
            raise ConfigError(f"expected features of shape (B, {self.obs_dim}), got {feats.shape}")
        if ids.shape[0] != feats.shape[0]:
            raise ConfigError("one instruction id per observation is required")
        if ids.size and (ids.min() < 0 or ids.max() >= self.instruction_count):
            raise ConfigError(f"instruction id out of range [0, {self.instruction_count})")
        x = Tensor(feats.astype(self.lift.weight.dtype))
        b = feats.shape[0]
        p = self.se(self.lift(x).reshape(b, self.n_p, self.d_p))
        pooled = p.mean(axis=1)
        emb = nx.getitem(self.instr_embed, ids)
        c = self.cog(nx.concat([pooled, emb], axis=-1))
        return p, c.reshape(b, 1, self.d_c)


def encode(obs, params: Encoder, timestep: int = 0) -> WorkingMemory:
    """Encode one observation into working memory."""
    with nx.no_grad():
        p, c = params.forward(np.asarray(obs.features)[None, :], [obs.instruction_id])
    return WorkingMemory(p.data[0], c.data[0], int(timestep))
