"""Training loop with two-pass memory threading.

Bank entries are stored values, not graph nodes, so a batch is processed in
two passes:

1. without gradients, every episode touched by the batch is replayed from
   its first frame with the current parameters, and a copy of the bank is
   taken just before each batch frame;
2. one batched pass with gradients encodes the batch frames, retrieves from
   those snapshots, and computes the diffusion loss.

Gradients therefore reach retrieval and fusion for the current frame only.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import numerics as nx
from ..action_expert import ActionNormalizer
from ..env import Episode
from ..errors import ConfigError, DataError, NumericError
from ..numerics import Adam
from .checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from .config import TrainConfig
from .data import Batch, FrameQueue, action_chunk
from .evaluate import evaluate
from .policy import Policy

METRICS_SCHEMA_VERSION = 1
METRICS_COLUMNS = ["schema_version", "step", "loss", "grad_norm", "val_score"]


@dataclass
class TrainResult:
    checkpoint: Checkpoint  # best validated parameters (final ones without validation)
    final: Checkpoint
    losses: list
    val_scores: list = field(default_factory=list)
    metrics_path: Path | None = None


class Trainer:
    def __init__(self, cfg: TrainConfig, demos: list[Episode], policy: Policy | None = None):
        if not demos:
            raise DataError("no demonstrations")
        for ep in demos:
            if ep.task != cfg.task:
                raise ConfigError(f"demo for {ep.task} given to a {cfg.task} run")
            if len(ep) < 1:
                raise DataError(f"episode {ep.episode_id} has no frames")
        self.cfg = cfg
        self.demos = demos
        if policy is None:
            norm = ActionNormalizer.fit(np.concatenate([ep.actions for ep in demos]))
            obs_norm = ActionNormalizer.fit(np.concatenate([ep.observations for ep in demos]))
            policy = Policy(cfg, norm, obs_norm)
        self.policy = policy
        pad = policy.pad_action()
        self.chunks = [
            np.stack([action_chunk(policy.normalizer.normalize(ep.actions), t, cfg.chunk_length, pad)
                      for t in range(len(ep))])
            for ep in demos
        ]
        self.queue = FrameQueue([len(ep) for ep in demos], cfg.batch_size, cfg.data_seed)
        self.params = policy.parameters()
        self.optimizer = Adam(self.params, lr=cfg.learning_rate)
        self.step = 0

    # -- pass 1 ---------------------------------------------------------------

    def bank_snapshots(self, batch: Batch) -> list:
        """Bank state seen by each batch frame, rebuilt from episode start."""
        pol = self.policy
        snaps = [None] * len(batch.frames)
        if not pol.uses_memory:
            return [pol.new_bank() for _ in batch.frames]
        segments = []
        pos = 0
        for ep_i, t0, t1 in batch.segments():
            segments.append((ep_i, t0, t1, pos, pol.new_bank(owner=self.demos[ep_i].episode_id)))
            pos += t1 - t0 + 1
        for t in range(max(s[2] for s in segments) + 1):
            live = []
            for ep_i, t0, t1, start, bank in segments:
                if t > t1:
                    continue
                if t >= t0:
                    snap = bank.copy()
                    _check_hygiene(snap, self.demos[ep_i], t)
                    snaps[start + t - t0] = snap
                if t < t1:
                    live.append((ep_i, bank))
            if not live:
                continue
            eps = [self.demos[i] for i, _ in live]
            pol.observe_step(
                np.stack([ep.observations[t] for ep in eps]),
                [ep.instruction_ids[t] for ep in eps],
                [ep.timesteps[t] for ep in eps],
                [b for _, b in live],
            )
        return snaps

    # -- pass 2 ---------------------------------------------------------------

    def batch_loss(self, step: int):
        batch = self.queue.batch_at(step)
        banks = self.bank_snapshots(batch)
        eps = [(self.demos[f.episode], f) for f in batch.frames]
        feats = np.stack([ep.observations[f.t] for ep, f in eps])
        ids = np.array([ep.instruction_ids[f.t] for ep, f in eps])
        chunks = np.stack([self.chunks[f.episode][f.t] for _, f in eps])
        rng = np.random.default_rng([self.cfg.seed, 1, step])
        return self.policy.loss(feats, ids, banks, chunks, rng)

    def train_step(self) -> tuple[float, float]:
        # per-op finite checks are skipped here; the loss and the gradient
        # norm (inside clipping) are checked instead, which catches the same failures
        with nx.finite_checks(False):
            loss = self.batch_loss(self.step)
            value = float(loss.item())
            if not np.isfinite(value):
                raise NumericError(f"non-finite loss at step {self.step}")
            self.policy.zero_grad()
            loss.backward()
            norm = nx.clip_grad_norm(self.params, self.cfg.grad_clip)
        self.optimizer.step()
        self.step += 1
        return value, norm

    def checkpoint(self, extra: dict | None = None) -> Checkpoint:
        return Checkpoint(self.policy, self.step, self.optimizer.state(), dict(extra or {}))

    def load_optimizer(self, state: dict | None, step: int) -> None:
        if state:
            self.optimizer.load_state(state)
        self.step = step


def _check_hygiene(bank, episode: Episode, t: int) -> None:
    if bank.owner != episode.episode_id:
        raise AssertionError("memory bank crossed an episode boundary")
    if any(e.timestep >= episode.timesteps[t] for e in bank.cognitive):
        raise AssertionError("memory bank holds entries from the future")


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def train(cfg: TrainConfig, demos: list[Episode], out_dir=None, resume=None, log=None) -> TrainResult:
    """Train a policy; writes ``metrics.csv``, ``best.npz`` and ``last.npz`` under ``out_dir``."""
    out = Path(out_dir) if out_dir is not None else None
    if resume is not None:
        ck = resume if isinstance(resume, Checkpoint) else load_checkpoint(resume)
        if ck.config.to_dict() != cfg.to_dict():
            # resuming may extend the run; everything else must match
            if ck.config.with_(total_steps=cfg.total_steps).to_dict() != cfg.to_dict():
                raise ConfigError("resume checkpoint was trained with a different config")
            ck.policy.cfg = cfg
        trainer = Trainer(cfg, demos, ck.policy)
        trainer.load_optimizer(ck.optimizer, ck.step)
        best_score = ck.extra.get("best_score", -1.0)
    else:
        trainer = Trainer(cfg, demos)
        best_score = -1.0
    policy = trainer.policy

    rows = []
    losses, val_scores = [], []
    best_state = policy.state_dict()
    best_step = trainer.step
    last_good = None
    with nx.using_dtype(cfg.dtype):
        while trainer.step < cfg.total_steps:
            last_good = trainer.checkpoint({"best_score": best_score})
            last_good.policy = _Snapshot(policy)
            try:
                loss, norm = trainer.train_step()
            except NumericError:
                if out is not None:
                    save_checkpoint(out / "last_good.npz", last_good)
                    _write_metrics(out / "metrics.csv", rows)
                raise
            losses.append(loss)
            val = None
            if cfg.val_every and (trainer.step % cfg.val_every == 0 or trainer.step == cfg.total_steps):
                val = evaluate(policy, cfg.task, cfg.val_trials, seed=cfg.eval_seed + 1).mean_score
                val_scores.append((trainer.step, val))
                if val > best_score:
                    best_score, best_state, best_step = val, policy.state_dict(), trainer.step
            rows.append([METRICS_SCHEMA_VERSION, trainer.step, _fmt(loss), _fmt(norm), _fmt(val)])
            if log is not None and (trainer.step % 100 == 0 or val is not None):
                log(f"step {trainer.step} loss {loss:.4f}" + (f" val {val:.3f}" if val is not None else ""))

    final = trainer.checkpoint({"best_score": best_score})
    if cfg.val_every and val_scores:
        best_policy = Policy(cfg, policy.normalizer, policy.obs_normalizer)
        best_policy.load_state_dict(best_state)
        best = Checkpoint(best_policy, best_step, None, {"best_score": best_score})
    else:
        best = final
    metrics_path = None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        metrics_path = _write_metrics(out / "metrics.csv", rows)
        save_checkpoint(out / "last.npz", final)
        save_checkpoint(out / "best.npz", best)
    return TrainResult(best, final, losses, val_scores, metrics_path)


class _Snapshot:
    """Parameter copy taken before a step, materialised only if it is saved."""

    def __init__(self, policy: Policy):
        self.cfg = policy.cfg
        self.normalizer = policy.normalizer
        self.obs_normalizer = policy.obs_normalizer
        self._state = policy.state_dict()

    def state_dict(self):
        return self._state


def metrics_text(rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(METRICS_COLUMNS)
    w.writerows(rows)
    return buf.getvalue()


def _write_metrics(path: Path, rows) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics_text(rows))
    return path
