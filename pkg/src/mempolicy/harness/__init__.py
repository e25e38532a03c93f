"""Training, evaluation and ablation harness."""

from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig, load_config, save_config
from .data import Batch, Frame, FrameQueue, action_chunk, build_batches
from .evaluate import AdaptiveEnsemble, EvalReport, ExpertAgent, PolicyAgent, evaluate, rollout
from .policy import Policy
from .train import METRICS_COLUMNS, TrainResult, Trainer, train

__all__ = [
    "METRICS_COLUMNS",
    "AdaptiveEnsemble",
    "Batch",
    "Checkpoint",
    "EvalReport",
    "ExpertAgent",
    "Frame",
    "FrameQueue",
    "Policy",
    "PolicyAgent",
    "TrainConfig",
    "TrainResult",
    "Trainer",
    "action_chunk",
    "build_batches",
    "evaluate",
    "load_checkpoint",
    "load_config",
    "rollout",
    "save_checkpoint",
    "save_config",
    "train",
]
