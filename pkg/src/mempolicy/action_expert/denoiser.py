"""Memory-conditioned transformer that predicts the noise in an action chunk.

Token layout per sample: ``[c-token, a_1 .. a_T]``; the c-token is also
added to every action token together with the step embedding. Each block runs
self-attention over that sequence, cross-attention from it to the
perceptual tokens, then a feed-forward sublayer, all pre-norm residual.
Dropped (unconditional) rows substitute learned null embeddings for both
condition streams.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .. import numerics as nx
from ..errors import ConfigError, DimensionError
from ..numerics import Module, Parameter, Tensor


@dataclass
class DenoiserConfig:
    action_dim: int
    horizon: int = 16  # chunk length T
    n_p: int = 4
    d_p: int = 64
    d_c: int = 64
    d_model: int = 128
    n_blocks: int = 3
    n_heads: int = 4
    ffn_mult: int = 4


class DenoiserBlock(Module):
    def __init__(self, rng, d: int, d_p: int, heads: int, ffn_mult: int, dtype=None):
        self.norm_sa = nx.LayerNorm(d, dtype=dtype)
        self.self_attn = nx.MultiHeadAttention(rng, d, d, d, heads, dtype=dtype)
        self.norm_ca = nx.LayerNorm(d, dtype=dtype)
        self.cross_attn = nx.MultiHeadAttention(rng, d, d_p, d, heads, dtype=dtype)
        self.norm_ff = nx.LayerNorm(d, dtype=dtype)
        self.ffn = nx.MLP(rng, d, ffn_mult * d, d, act="silu", dtype=dtype)

    def __call__(self, x: Tensor, p: Tensor) -> Tensor:
        h = self.norm_sa(x)
        x = x + self.self_attn(h, h)
        x = x + self.cross_attn(self.norm_ca(x), p)
        return x + self.ffn(self.norm_ff(x))


class Denoiser(Module):
    def __init__(self, rng, cfg: DenoiserConfig, dtype=None):
        dtype = dtype or nx.default_dtype()
        if cfg.d_model % 2:
            raise ConfigError("d_model must be even for the step embedding")
        self.cfg = cfg
        d = cfg.d_model
        self.action_in = nx.Linear(rng, cfg.action_dim, d, dtype=dtype)
        self.pos_emb = Parameter(rng.normal(0.0, 0.02, size=(cfg.horizon, d)).astype(dtype))
        self.time_mlp = nx.MLP(rng, d, d, d, act="silu", dtype=dtype)
        self.cond_c = nx.Linear(rng, cfg.d_c, d, dtype=dtype)
        self.cond_p = nx.Linear(rng, cfg.d_p, cfg.d_p, dtype=dtype)
        self.null_c = Parameter(rng.normal(0.0, 0.02, size=(1, 1, d)).astype(dtype))
        self.null_p = Parameter(rng.normal(0.0, 0.02, size=(1, cfg.n_p, cfg.d_p)).astype(dtype))
        self.blocks = [
            DenoiserBlock(rng, d, cfg.d_p, cfg.n_heads, cfg.ffn_mult, dtype) for _ in range(cfg.n_blocks)
        ]
        self.norm_out = nx.LayerNorm(d, dtype=dtype)
        self.head = nx.Linear(rng, d, cfg.action_dim, zero=True, dtype=dtype)

    def __call__(self, noisy, k, p, c, drop=None) -> Tensor:
        """Predict noise.

        noisy (B, T, A); k (B,) integer diffusion steps; p (B, n_p, d_p) and
        c (B, 1, d_c) the augmented working memory (either may be None when
        every row is unconditional); drop (B,) bool marks rows that use the
        null condition.
        """
        cfg = self.cfg
        noisy = nx.as_tensor(noisy)
        b = noisy.shape[0]
        if noisy.shape[1:] != (cfg.horizon, cfg.action_dim):
            raise DimensionError(
                f"noisy chunk must be (B, {cfg.horizon}, {cfg.action_dim}), got {noisy.shape}"
            )
        k = np.asarray(k).reshape(-1)
        if k.shape[0] != b:
            raise DimensionError("one diffusion step per row is required")
        dtype = self.head.weight.dtype
        drop = np.zeros(b, bool) if drop is None else np.asarray(drop, bool).reshape(-1)
        if p is None or c is None:
            if not drop.all():
                raise ConfigError("conditioned rows need both p and c")
            c_tok = nx.broadcast_to(self.null_c, (b, 1, cfg.d_model))
            p_tok = nx.broadcast_to(self.null_p, (b, cfg.n_p, cfg.d_p))
        else:
            c, p = nx.as_tensor(c), nx.as_tensor(p)
            if c.shape != (b, 1, cfg.d_c) or p.shape != (b, cfg.n_p, cfg.d_p):
                raise DimensionError(f"condition shapes {p.shape}, {c.shape} do not match the denoiser")
            c_tok, p_tok = self.cond_c(c), self.cond_p(p)
            if drop.any():
                keep = (~drop).astype(dtype).reshape(b, 1, 1)
                c_tok = c_tok * keep + self.null_c * (1.0 - keep)
                p_tok = p_tok * keep + self.null_p * (1.0 - keep)
        temb = self.time_mlp(Tensor(nx.sinusoid(k, cfg.d_model, dtype=dtype))).reshape(b, 1, cfg.d_model)
        # the summary token also joins the step embedding of every action token
        h = self.action_in(noisy) + self.pos_emb + temb + c_tok
        x = nx.concat([c_tok, h], axis=1)
        for block in self.blocks:
            x = block(x, p_tok)
        return self.head(self.norm_out(x[:, 1:]))
