"""Noise schedule, training objective and DDIM sampling with guidance."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .. import numerics as nx
from ..errors import ConfigError, DataError
from ..numerics import Tensor

COSINE_OFFSET = 0.008
MAX_BETA = 0.999
X0_CLIP = 4.0
NORM_LIMIT = 5.0


@dataclass(frozen=True)
class NoiseSchedule:
    steps: int
    alphas_bar: np.ndarray

    def __post_init__(self):
        if len(self.alphas_bar) != self.steps:
            raise ConfigError("schedule length disagrees with step count")


def make_schedule(k_train: int = 100, s: float = COSINE_OFFSET) -> NoiseSchedule:
    """Cosine schedule over ``k_train`` steps; per-step betas capped at 0.999."""
    if k_train < 10:
        raise ConfigError("need at least 10 diffusion steps")
    k = np.arange(k_train, dtype=np.float64)
    f = np.cos((k / k_train + s) / (1 + s) * math.pi / 2) ** 2
    abar = f / math.cos(s / (1 + s) * math.pi / 2) ** 2
    # cap each step's beta, which also keeps the sequence strictly decreasing
    prev = np.concatenate([[1.0], abar[:-1]])
    betas = np.clip(1.0 - abar / prev, 0.0, MAX_BETA)
    betas[0] = 1.0 - abar[0]
    return NoiseSchedule(k_train, np.minimum(np.cumprod(1.0 - betas), 1.0))


@dataclass
class ActionNormalizer:
    """Per-dimension affine normalisation fitted on demonstration actions."""

    mean: np.ndarray
    std: np.ndarray
    std_floor: float = 1e-2

    @classmethod
    def fit(cls, actions: np.ndarray, std_floor: float = 1e-2) -> "ActionNormalizer":
        a = np.asarray(actions, dtype=np.float64).reshape(-1, np.shape(actions)[-1])
        return cls(a.mean(axis=0), np.maximum(a.std(axis=0), std_floor), std_floor)

    def normalize(self, a):
        return (np.asarray(a) - self.mean) / self.std

    def denormalize(self, z):
        return np.asarray(z) * self.std + self.mean


def cfg_combine(eps_cond, eps_uncond, scale: float):
    """Classifier-free guidance; scale 0 and 1 return the inputs exactly."""
    if scale == 1.0:
        return eps_cond
    if scale == 0.0:
        return eps_uncond
    return eps_uncond + scale * (eps_cond - eps_uncond)


def q_sample(clean, k, eps, schedule: NoiseSchedule):
    ab = schedule.alphas_bar[np.asarray(k)].reshape(-1, *([1] * (np.ndim(clean) - 1)))
    return np.sqrt(ab) * clean + np.sqrt(1.0 - ab) * eps


def training_loss(denoiser, p, c, clean, schedule: NoiseSchedule, rng: np.random.Generator,
                  repeats: int = 4, p_uncond: float = 0.1) -> Tensor:
    """Noise-prediction MSE, summed over the chunk and averaged over draws.

    ``clean`` (B, T, A) must already be normalised; each row gets ``repeats``
    independent (step, noise, drop) draws.
    """
    clean = np.asarray(clean)
    if clean.ndim != 3 or clean.shape[0] == 0:
        raise DataError("training batch must be a nonempty (B, T, A) array")
    if np.abs(clean).max() > NORM_LIMIT:
        raise DataError(f"normalised actions exceed +-{NORM_LIMIT} sigma; were they normalised?")
    b = clean.shape[0]
    idx = np.repeat(np.arange(b), repeats)
    n = len(idx)
    k = rng.integers(0, schedule.steps, size=n)
    eps = rng.standard_normal(size=(n,) + clean.shape[1:])
    drop = rng.random(n) < p_uncond
    dtype = denoiser.head.weight.dtype
    noisy = q_sample(clean[idx], k, eps, schedule).astype(dtype)
    p_rep = None if p is None else nx.getitem(nx.as_tensor(p), idx)
    c_rep = None if c is None else nx.getitem(nx.as_tensor(c), idx)
    if p is None:
        drop = np.ones(n, bool)
    pred = denoiser(Tensor(noisy), k, p_rep, c_rep, drop)
    err = pred - Tensor(eps.astype(dtype))
    return (err * err).sum() * (1.0 / n)


def ddim_timesteps(k_train: int, n_steps: int) -> np.ndarray:
    if n_steps < 1 or k_train % n_steps:
        raise ConfigError(f"{n_steps} sampling steps do not evenly divide {k_train}")
    stride = k_train // n_steps
    return (np.arange(n_steps) * stride + stride - 1)[::-1]


def initial_noise(seeds, shape) -> np.ndarray:
    return np.stack([np.random.default_rng(s).standard_normal(shape) for s in seeds])


def ddim_sample(eps_fn: Callable, schedule: NoiseSchedule, seeds, shape, n_steps: int = 10,
                cfg_scale: float = 1.5, clip: float = X0_CLIP) -> np.ndarray:
    """Deterministic DDIM from per-row Gaussian starts.

    ``eps_fn(x, k, guided)`` returns (eps_cond, eps_uncond) for the batch
    ``x`` at step ``k``; eps_uncond may be None when ``guided`` is False.
    Output is in normalised action space.
    """
    if cfg_scale < 0:
        raise ConfigError("cfg_scale must be nonnegative")
    guided = cfg_scale != 1.0
    x = initial_noise(seeds, shape)
    ts = ddim_timesteps(schedule.steps, n_steps)
    ab = schedule.alphas_bar
    for i, t in enumerate(ts):
        ab_t = ab[t]
        ab_prev = ab[ts[i + 1]] if i + 1 < len(ts) else 1.0
        eps_c, eps_u = eps_fn(x, t, guided)
        eps = cfg_combine(eps_c, eps_u, cfg_scale) if guided else eps_c
        x0 = np.clip((x - math.sqrt(1 - ab_t) * eps) / math.sqrt(ab_t), -clip, clip)
        eps = (x - math.sqrt(ab_t) * x0) / math.sqrt(1 - ab_t)
        x = math.sqrt(ab_prev) * x0 + math.sqrt(1 - ab_prev) * eps
    return x


def model_eps_fn(denoiser, p, c):
    """Wrap a denoiser and a fixed condition batch as an ``eps_fn``."""

    def fn(x, k, guided):
        b = x.shape[0]
        dtype = denoiser.head.weight.dtype
        with nx.no_grad():
            if not guided:
                e = denoiser(Tensor(x.astype(dtype)), np.full(b, k), p, c)
                return e.data.astype(np.float64), None
            xx = np.concatenate([x, x]).astype(dtype)
            pp = None if p is None else np.concatenate([p, p])
            cc = None if c is None else np.concatenate([c, c])
            drop = np.concatenate([np.zeros(b, bool), np.ones(b, bool)])
            if p is None:
                drop[:] = True
            e = denoiser(Tensor(xx), np.full(2 * b, k), pp, cc, drop).data.astype(np.float64)
        return e[:b], e[b:]

    return fn


def point_mass_eps_fn(mu, schedule: NoiseSchedule):
    """Exact noise predictor when every clean chunk equals ``mu``."""
    mu = np.asarray(mu, dtype=np.float64)

    def fn(x, k, guided):
        ab = schedule.alphas_bar[k]
        eps = (x - math.sqrt(ab) * mu) / math.sqrt(1 - ab)
        return eps, (eps if guided else None)

    return fn
