"""Diffusion action expert conditioned on the memory-augmented tokens."""

from .denoiser import Denoiser, DenoiserBlock, DenoiserConfig
from .diffusion import (
    ActionNormalizer,
    NoiseSchedule,
    cfg_combine,
    ddim_sample,
    ddim_timesteps,
    initial_noise,
    make_schedule,
    model_eps_fn,
    point_mass_eps_fn,
    q_sample,
    training_loss,
)

__all__ = [
    "ActionNormalizer",
    "Denoiser",
    "DenoiserBlock",
    "DenoiserConfig",
    "NoiseSchedule",
    "cfg_combine",
    "ddim_sample",
    "ddim_timesteps",
    "initial_noise",
    "make_schedule",
    "model_eps_fn",
    "point_mass_eps_fn",
    "q_sample",
    "training_loss",
]
