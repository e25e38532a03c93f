"""Closed-loop rollouts with memory threading and optional action ensembling.

All trials of an evaluation advance in lockstep, so each environment step
costs one batched encode/retrieve and, when re-planning, one batched DDIM
call. Each trial owns its environment seed, its bank and its sampling
seeds, so results do not depend on how trials are grouped.
"""

from __future__ import annotations

import copy
import time
from dataclasses import dataclass, field

import numpy as np

from ..env import env_reset, env_step, get_task, idle_action, scripted_expert
from ..env.demos import episode_seed
from ..errors import ConfigError
from .policy import Policy


@dataclass
class EvalReport:
    task: str
    trials: int
    mean_score: float
    success_rate: float
    scores: list
    fingerprint: str
    wall_clock: float
    params_hash_before: str = ""
    params_hash_after: str = ""
    lengths: list = field(default_factory=list)


class AdaptiveEnsemble:
    """Blend every stored prediction for the current step by exp(-alpha * age).

    Age counts re-predictions: the newest chunk has age 0.
    """

    def __init__(self, alpha: float = 0.1):
        if alpha < 0:
            raise ConfigError("ensemble alpha must be nonnegative")
        self.alpha = alpha
        self.issue = -1
        self.preds: dict[int, list] = {}

    def reset(self) -> None:
        self.issue = -1
        self.preds = {}

    def add(self, chunk: np.ndarray, t0: int) -> None:
        self.issue += 1
        for j, a in enumerate(np.asarray(chunk)):
            self.preds.setdefault(t0 + j, []).append((self.issue, a))
        for t in [t for t in self.preds if t < t0]:
            del self.preds[t]

    def weights(self, ages) -> np.ndarray:
        w = np.exp(-self.alpha * np.asarray(ages, dtype=np.float64))
        return w / w.sum()

    def action(self, t: int) -> np.ndarray:
        entries = self.preds.get(t)
        if not entries:
            raise ConfigError(f"no prediction covers step {t}")
        w = self.weights([self.issue - i for i, _ in entries])
        return np.einsum("i,ij->j", w, np.stack([a for _, a in entries]))


class PolicyAgent:
    def __init__(self, policy: Policy):
        self.policy = policy
        self.banks = []
        self.cond = {}

    def reset(self, n: int) -> None:
        self.banks = [self.policy.new_bank(owner=i) for i in range(n)]
        self.cond = {}

    def observe(self, idx, observations, timesteps, states) -> None:
        for i in idx:
            if self.banks[i].owner != i:
                raise AssertionError("bank carried across trials")
        feats = np.stack([o.features for o in observations])
        ids = [o.instruction_id for o in observations]
        p, c = self.policy.observe_step(feats, ids, timesteps, [self.banks[i] for i in idx])
        for j, i in enumerate(idx):
            self.cond[i] = (p[j], c[j])

    def plan(self, idx, seeds, states) -> np.ndarray:
        p = np.stack([self.cond[i][0] for i in idx])
        c = np.stack([self.cond[i][1] for i in idx])
        return self.policy.sample(p, c, seeds)


class ExpertAgent:
    """The scripted expert dressed as a policy: plans by simulating a copy of the state."""

    def __init__(self, task: str, chunk_length: int = 16):
        self.spec = get_task(task)
        self.chunk_length = chunk_length

    def reset(self, n: int) -> None:
        pass

    def observe(self, idx, observations, timesteps, states) -> None:
        pass

    def plan(self, idx, seeds, states) -> np.ndarray:
        chunks = []
        for i in idx:
            sim = copy.deepcopy(states[i])
            chunk = []
            for _ in range(self.chunk_length):
                if sim.done:
                    chunk.append(idle_action(self.spec))
                    continue
                a = scripted_expert(sim)
                chunk.append(a)
                env_step(sim, a)
            chunks.append(np.stack(chunk))
        return np.stack(chunks)


def _sample_seed(seed: int, trial: int, t: int) -> int:
    return int(np.random.SeedSequence([seed, trial, t, 17]).generate_state(1)[0])


def rollout(agent, task: str, trials: int, seed: int, ensemble: str = "off", alpha: float = 0.1,
            exec_horizon: int | None = None) -> tuple[list, list]:
    spec = get_task(task)
    if trials < 1:
        raise ConfigError("trials must be >= 1")
    if ensemble not in ("off", "adaptive"):
        raise ConfigError(f"ensemble must be off or adaptive, got {ensemble!r}")
    horizon = exec_horizon or spec.exec_horizon
    pairs = [env_reset(spec, episode_seed(seed, i)) for i in range(trials)]
    states = [s for s, _ in pairs]
    obs = [o for _, o in pairs]
    agent.reset(trials)
    queues = [[] for _ in range(trials)]
    ens = [AdaptiveEnsemble(alpha) for _ in range(trials)]
    while True:
        active = [i for i in range(trials) if not states[i].done]
        if not active:
            break
        agent.observe(active, [obs[i] for i in active], [states[i].step_count for i in active], states)
        need = [i for i in active if ensemble == "adaptive" or not queues[i]]
        if need:
            seeds = [_sample_seed(seed, i, states[i].step_count) for i in need]
            chunks = agent.plan(need, seeds, states)
            for i, chunk in zip(need, chunks):
                if ensemble == "adaptive":
                    ens[i].add(chunk, states[i].step_count)
                else:
                    queues[i] = list(chunk[:horizon])
        for i in active:
            a = ens[i].action(states[i].step_count) if ensemble == "adaptive" else queues[i].pop(0)
            a = np.array(a, dtype=np.float64)
            for g in spec.gripper_dims:
                a[g] = 1.0 if a[g] > 0 else -1.0
            obs[i] = env_step(states[i], a).observation
    return [float(s.score) for s in states], [s.step_count for s in states]


def evaluate(checkpoint, task: str | None = None, trials: int = 50, ensemble: str = "off",
             alpha: float = 0.1, exec_horizon: int | None = None, seed: int | None = None) -> EvalReport:
    """Roll out a checkpoint (or its policy, or an agent) and summarise scores."""
    started = time.perf_counter()
    policy = getattr(checkpoint, "policy", checkpoint)
    if isinstance(policy, Policy):
        task = task or policy.cfg.task
        policy.check_task(task)
        agent = PolicyAgent(policy)
        seed = policy.cfg.eval_seed if seed is None else seed
        fingerprint = policy.cfg.fingerprint()
    else:
        agent = policy
        seed = 1000 if seed is None else seed
        fingerprint = type(agent).__name__
    if task is None:
        raise ConfigError("task is required")
    before = policy.params_hash() if isinstance(policy, Policy) else ""
    scores, lengths = rollout(agent, task, trials, seed, ensemble, alpha, exec_horizon)
    after = policy.params_hash() if isinstance(policy, Policy) else ""
    if before != after:
        raise AssertionError("evaluation changed the checkpoint parameters")
    scores_arr = np.array(scores)
    return EvalReport(
        task,
        trials,
        float(scores_arr.mean()),
        float(np.mean(scores_arr >= 1.0 - 1e-9)),
        scores,
        fingerprint,
        time.perf_counter() - started,
        before,
        after,
        lengths,
    )


__all__ = [
    "AdaptiveEnsemble",
    "EvalReport",
    "ExpertAgent",
    "PolicyAgent",
    "evaluate",
    "rollout",
]
