"""Retrieval, gated fusion and the per-step bank update.

Everything here is batched: a :class:`BankBatch` pads a list of bank
snapshots to a common length with a validity mask, so a training batch of
frames (each with its own history) runs through one attention call per
layer. Stored bank values are plain arrays, so gradients stop at the bank.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..encoder import WorkingMemory
from ..errors import ConfigError, DimensionError, PreconditionError
from ..numerics import Module, Tensor
from .bank import MemoryBank, consolidate


def timestep_encoding(t, d: int) -> np.ndarray:
    """Sinusoidal encoding of a (real) timestep, shape (1, d)."""
    if t < 0:
        raise ConfigError("timestep must be nonnegative")
    return nx.sinusoid([t], d, dtype=np.float64)


@dataclass
class MemoryConfig:
    n_p: int = 4
    d_p: int = 64
    d_c: int = 64
    capacity: int = 16
    heads_perceptual: int = 4
    heads_cognitive: int = 1
    n_layers: int = 2
    ffn_mult: int = 4
    use_perceptual: bool = True
    use_cognitive: bool = True
    use_timestep_pe: bool = True
    fusion: str = "gate"  # or "add"
    consolidation: str = "merge"  # or "fifo"

    def __post_init__(self):
        if self.fusion not in ("gate", "add"):
            raise ConfigError(f"unknown fusion {self.fusion!r}")
        if self.consolidation not in ("merge", "fifo"):
            raise ConfigError(f"unknown consolidation {self.consolidation!r}")


@dataclass
class RetrievedContext:
    perceptual: np.ndarray
    cognitive: np.ndarray


@dataclass
class AugmentedWorkingMemory:
    perceptual: np.ndarray
    cognitive: np.ndarray


@dataclass
class BankBatch:
    """Padded stacks of bank snapshots for one stream."""

    values: np.ndarray  # (B, L, n, d)
    timesteps: np.ndarray  # (B, L)
    mask: np.ndarray  # (B, L) bool

    @classmethod
    def from_banks(cls, banks, stream: str, n: int, d: int, dtype) -> "BankBatch":
        length = max(1, max(len(b.stream(stream)) for b in banks))
        vals = np.zeros((len(banks), length, n, d), dtype=dtype)
        ts = np.zeros((len(banks), length))
        mask = np.zeros((len(banks), length), dtype=bool)
        for i, bank in enumerate(banks):
            for j, e in enumerate(bank.stream(stream)):
                vals[i, j] = e.value
                ts[i, j] = e.timestep
                mask[i, j] = True
        return cls(vals, ts, mask)

    @property
    def nonempty(self) -> np.ndarray:
        return self.mask.any(axis=1)


class RetrievalLayer(Module):
    """Cross-attention from current tokens to the bank, then a residual FFN.

    The attention output replaces the query (the current tokens come back in
    through fusion); the FFN sublayer is pre-norm residual.
    """

    def __init__(self, rng, d: int, heads: int, ffn_mult: int = 4, dtype=None):
        self.norm_q = nx.LayerNorm(d, dtype=dtype)
        self.attn = nx.MultiHeadAttention(rng, d, d, d, heads, dtype=dtype)
        self.norm_f = nx.LayerNorm(d, dtype=dtype)
        self.ffn = nx.MLP(rng, d, ffn_mult * d, d, dtype=dtype)

    def __call__(self, h: Tensor, keys: Tensor, values: Tensor, mask) -> Tensor:
        a = self.attn(self.norm_q(h), keys, values, key_mask=mask)
        return a + self.ffn(self.norm_f(a))


class StreamRetriever(Module):
    def __init__(self, rng, d: int, heads: int, n_layers: int = 2, ffn_mult: int = 4, dtype=None):
        self.layers = [RetrievalLayer(rng, d, heads, ffn_mult, dtype) for _ in range(n_layers)]
        self.d = d

    def __call__(self, query: Tensor, bank: BankBatch, use_pe: bool = True) -> Tensor:
        b, length, n, d = bank.values.shape
        vals = bank.values
        keys = vals
        if use_pe:
            te = nx.sinusoid(bank.timesteps.reshape(-1), d, dtype=vals.dtype).reshape(b, length, 1, d)
            keys = vals + te
        mask = np.repeat(bank.mask, n, axis=1)
        K = Tensor(keys.reshape(b, length * n, d))
        V = Tensor(vals.reshape(b, length * n, d))
        h = query
        for layer in self.layers:
            h = layer(h, K, V, mask)
        return h


class GateFusion(Module):
    """Per-channel convex blend of current tokens and retrieved context."""

    def __init__(self, rng, d: int, dtype=None):
        # zero final layer: gates start at exactly 0.5
        self.mlp = nx.MLP(rng, 2 * d, d, d, zero_out=True, dtype=dtype)

    def gate(self, x: Tensor, H: Tensor) -> Tensor:
        return nx.sigmoid(self.mlp(nx.concat([x, H], axis=-1)))

    def __call__(self, x: Tensor, H: Tensor) -> Tensor:
        if x.shape != H.shape:
            raise DimensionError(f"fusion inputs differ in shape: {x.shape} vs {H.shape}")
        g = self.gate(x, H)
        return g * H + (1.0 - g) * x


def gate_fuse(x, H, params: GateFusion) -> Tensor:
    return params(nx.as_tensor(x), nx.as_tensor(H))


class MemoryModule(Module):
    def __init__(self, rng, cfg: MemoryConfig, dtype=None):
        self.cfg = cfg
        self.per_retriever = StreamRetriever(rng, cfg.d_p, cfg.heads_perceptual, cfg.n_layers, cfg.ffn_mult, dtype)
        self.cog_retriever = StreamRetriever(rng, cfg.d_c, cfg.heads_cognitive, cfg.n_layers, cfg.ffn_mult, dtype)
        self.per_gate = GateFusion(rng, cfg.d_p, dtype)
        self.cog_gate = GateFusion(rng, cfg.d_c, dtype)

    @property
    def active(self) -> bool:
        return self.cfg.use_perceptual or self.cfg.use_cognitive

    def new_bank(self) -> MemoryBank:
        return MemoryBank(self.cfg.capacity, self.cfg.consolidation)

    def _fuse(self, gate: GateFusion, x: Tensor, H: Tensor) -> Tensor:
        if self.cfg.fusion == "add":
            return x + H
        return gate(x, H)

    def augment(self, p: Tensor, c: Tensor, banks: list) -> tuple[Tensor, Tensor]:
        """Batched retrieve + fuse. Rows whose bank is empty pass through unchanged."""
        dtype = p.dtype
        out = []
        for use, x, stream, n, d, retr, gate in (
            (self.cfg.use_perceptual, p, "perceptual", self.cfg.n_p, self.cfg.d_p, self.per_retriever, self.per_gate),
            (self.cfg.use_cognitive, c, "cognitive", 1, self.cfg.d_c, self.cog_retriever, self.cog_gate),
        ):
            bb = BankBatch.from_banks(banks, stream, n, d, dtype) if use else None
            if bb is None or not bb.nonempty.any():
                out.append(x)
                continue
            H = retr(x, bb, self.cfg.use_timestep_pe)
            fused = self._fuse(gate, x, H)
            if bb.nonempty.all():
                out.append(fused)
            else:
                keep = bb.nonempty.astype(dtype).reshape(-1, 1, 1)
                out.append(fused * keep + x * (1.0 - keep))
        return out[0], out[1]

    def retrieve(self, wm: WorkingMemory, bank: MemoryBank) -> RetrievedContext:
        if not bank.perceptual or not bank.cognitive:
            raise PreconditionError("retrieve() needs a nonempty bank; use step() for cold start")
        dtype = self.per_gate.mlp.fc1.weight.dtype
        with nx.no_grad():
            hp = self.per_retriever(
                Tensor(wm.perceptual[None].astype(dtype)),
                BankBatch.from_banks([bank], "perceptual", self.cfg.n_p, self.cfg.d_p, dtype),
                self.cfg.use_timestep_pe,
            )
            hc = self.cog_retriever(
                Tensor(wm.cognitive[None].astype(dtype)),
                BankBatch.from_banks([bank], "cognitive", 1, self.cfg.d_c, dtype),
                self.cfg.use_timestep_pe,
            )
        return RetrievedContext(hp.data[0], hc.data[0])

    def step(self, wm: WorkingMemory, bank: MemoryBank) -> tuple[AugmentedWorkingMemory, MemoryBank]:
        """Augment the working memory from ``bank`` and write the result back.

        Mutates and returns ``bank``. With an empty bank the raw tokens are
        returned and stored unchanged.
        """
        if wm.timestep <= bank.latest_timestep():
            from ..errors import OrderingError

            raise OrderingError(f"timestep {wm.timestep} does not advance the bank")
        if bank.is_empty() or not self.active:
            aug = AugmentedWorkingMemory(wm.perceptual, wm.cognitive)
        else:
            dtype = self.per_gate.mlp.fc1.weight.dtype
            with nx.no_grad():
                p, c = self.augment(
                    Tensor(wm.perceptual[None].astype(dtype)), Tensor(wm.cognitive[None].astype(dtype)), [bank]
                )
            aug = AugmentedWorkingMemory(p.data[0], c.data[0])
        bank.insert(aug.perceptual, aug.cognitive, wm.timestep)
        consolidate(bank)
        return aug, bank
