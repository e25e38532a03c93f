"""The full policy: encoder, memory module and diffusion action expert."""

from __future__ import annotations

import numpy as np

from .. import numerics as nx
from ..action_expert import (
    ActionNormalizer,
    Denoiser,
    DenoiserConfig,
    ddim_sample,
    make_schedule,
    model_eps_fn,
    training_loss,
)
from ..encoder import Encoder
from ..env import get_task, idle_action
from ..errors import ConfigError, NumericError
from ..memory import MemoryBank, MemoryConfig, MemoryModule, consolidate
from ..numerics import Module, Tensor
from .config import TrainConfig


def memory_config(cfg: TrainConfig) -> MemoryConfig:
    return MemoryConfig(
        n_p=cfg.n_p,
        d_p=cfg.d_p,
        d_c=cfg.d_c,
        capacity=cfg.memory_capacity,
        heads_perceptual=cfg.heads_perceptual,
        heads_cognitive=cfg.heads_cognitive,
        use_perceptual=cfg.use_perceptual,
        use_cognitive=cfg.use_cognitive,
        use_timestep_pe=cfg.use_timestep_pe,
        fusion=cfg.fusion,
        consolidation=cfg.consolidation,
    )


class Policy(Module):
    def __init__(
        self,
        cfg: TrainConfig,
        normalizer: ActionNormalizer | None = None,
        obs_normalizer: ActionNormalizer | None = None,
    ):
        spec = get_task(cfg.task)
        dtype = cfg.dtype
        rng = np.random.default_rng([cfg.seed, 0])
        self.cfg = cfg
        self.spec = spec
        self.encoder = Encoder(rng, spec.obs_dim, spec.instruction_count, cfg.n_p, cfg.d_p, cfg.d_c, dtype=dtype)
        self.memory = MemoryModule(rng, memory_config(cfg), dtype=dtype)
        self.denoiser = Denoiser(
            rng,
            DenoiserConfig(
                spec.action_dim, cfg.chunk_length, cfg.n_p, cfg.d_p, cfg.d_c,
                cfg.d_model, cfg.n_blocks, cfg.n_heads,
            ),
            dtype=dtype,
        )
        self.schedule = make_schedule(cfg.diffusion_steps)
        self.normalizer = normalizer or ActionNormalizer(np.zeros(spec.action_dim), np.ones(spec.action_dim))
        # observation features are standardised with demo statistics before encoding
        self.obs_normalizer = obs_normalizer or ActionNormalizer(np.zeros(spec.obs_dim), np.ones(spec.obs_dim))
        self.register_names()

    @property
    def dtype(self):
        return self.cfg.dtype

    @property
    def uses_memory(self) -> bool:
        return self.memory.active

    def new_bank(self, owner=None) -> MemoryBank:
        bank = self.memory.new_bank()
        bank.owner = owner
        return bank

    def pad_action(self) -> np.ndarray:
        return self.normalizer.normalize(idle_action(self.spec))

    def params_hash(self) -> str:
        import hashlib

        h = hashlib.sha256()
        for name, p in self.named_parameters():
            h.update(name.encode())
            h.update(np.ascontiguousarray(p.data).tobytes())
        return h.hexdigest()

    # -- forward pieces -------------------------------------------------------

    def encode(self, features, instruction_ids) -> tuple[Tensor, Tensor]:
        feats = self.obs_normalizer.normalize(np.asarray(features, dtype=np.float64))
        return self.encoder.forward(feats.astype(self.dtype), instruction_ids)

    def augment(self, p: Tensor, c: Tensor, banks) -> tuple[Tensor, Tensor]:
        if not self.uses_memory:
            return p, c
        return self.memory.augment(p, c, banks)

    def write(self, banks, p: np.ndarray, c: np.ndarray, timesteps) -> None:
        """Store augmented tokens row by row and consolidate each bank."""
        for bank, pi, ci, t in zip(banks, p, c, timesteps):
            bank.insert(pi, ci, t)
            consolidate(bank)

    def observe_step(self, features, instruction_ids, timesteps, banks) -> tuple[np.ndarray, np.ndarray]:
        """Encode, augment and write back for one batched step (no gradients)."""
        with nx.no_grad():
            p, c = self.encode(features, instruction_ids)
            p, c = self.augment(p, c, banks)
        if self.uses_memory:
            self.write(banks, p.data, c.data, timesteps)
        return p.data, c.data

    def loss(self, features, instruction_ids, banks, chunks, rng) -> Tensor:
        p, c = self.encode(features, instruction_ids)
        p, c = self.augment(p, c, banks)
        return training_loss(
            self.denoiser, p, c, chunks, self.schedule, rng, self.cfg.repeats, self.cfg.p_uncond
        )

    def sample(self, p: np.ndarray, c: np.ndarray, seeds) -> np.ndarray:
        """Denormalised action chunks (B, T, A) for a batch of conditions."""
        fn = model_eps_fn(self.denoiser, p, c)
        shape = (self.cfg.chunk_length, self.spec.action_dim)
        with nx.finite_checks(False):
            z = ddim_sample(fn, self.schedule, seeds, shape, self.cfg.sample_steps, self.cfg.cfg_scale)
        if not np.isfinite(z).all():
            raise NumericError("sampling produced non-finite actions")
        return self.normalizer.denormalize(z)

    def check_task(self, task: str) -> None:
        spec = get_task(task)
        if (spec.obs_dim, spec.action_dim, spec.instruction_count) != (
            self.spec.obs_dim, self.spec.action_dim, self.spec.instruction_count
        ):
            raise ConfigError(f"checkpoint trained for {self.spec.name} does not fit task {task}")
