"""Expert demonstrations and the line-delimited episode file format.

File layout: the first line is a JSON header, every following line one
record. Floats go through ``repr`` so values round-trip exactly.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError, GenerationError
from .tasks import TaskSpec, env_reset, env_step, get_task, scripted_expert

FORMAT = "mempolicy-episode"
VERSION = 1

# std of the Gaussian perturbation added to executed motion commands; the
# recorded label is always the clean expert action
DEMO_NOISE = 0.04


@dataclass
class Episode:
    episode_id: int
    task: str
    timesteps: np.ndarray  # (n,)
    observations: np.ndarray  # (n, obs_dim)
    instruction_ids: np.ndarray  # (n,)
    actions: np.ndarray  # (n, action_dim)
    seed: int = 0
    score: float = 0.0

    def __len__(self) -> int:
        return len(self.timesteps)


def episode_seed(seed: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, index]).generate_state(1)[0])


def _perturbed_step(state, a, rng, noise):
    """Step with noisy motion unless the noise would change a discrete event.

    The clean and noisy steps are both simulated; the noisy one is kept only
    when score, termination and internal progress agree, so presses, grasps
    and placements happen exactly where the expert puts them.
    """
    if noise <= 0:
        return env_step(state, a)
    motion = [i for i in range(len(a)) if i not in state.task.gripper_dims]
    noisy = a.copy()
    noisy[motion] += rng.normal(0.0, noise, size=len(motion))
    clean_state, noisy_state = copy.deepcopy(state), copy.deepcopy(state)
    clean = env_step(clean_state, a)
    result = env_step(noisy_state, noisy)
    same = (
        clean_state.done == noisy_state.done
        and clean_state.score == noisy_state.score
        and clean_state.internal == noisy_state.internal
    )
    chosen, out = (noisy_state, result) if same else (clean_state, clean)
    state.__dict__.update(chosen.__dict__)
    return out


def rollout_expert(spec: TaskSpec, seed: int, episode_id: int = 0, noise: float = DEMO_NOISE) -> Episode:
    state, obs = env_reset(spec, seed)
    rng = np.random.default_rng([seed, 7])
    ts, observations, instr, actions = [], [], [], []
    while not state.done:
        a = scripted_expert(state)
        ts.append(state.step_count)
        observations.append(obs.features)
        instr.append(obs.instruction_id)
        actions.append(a)
        obs = _perturbed_step(state, a, rng, noise).observation
    return Episode(
        episode_id,
        spec.name,
        np.array(ts, dtype=np.int64),
        np.array(observations),
        np.array(instr, dtype=np.int64),
        np.array(actions),
        seed,
        state.score,
    )


def generate_demos(task: TaskSpec | str, n: int, seed: int, noise: float = DEMO_NOISE) -> list[Episode]:
    spec = get_task(task) if isinstance(task, str) else task
    if n < 1:
        raise DataError("need at least one demonstration")
    episodes = []
    for i in range(n):
        ep = rollout_expert(spec, episode_seed(seed, i), i, noise)
        if ep.score < 1.0 - 1e-9:
            raise GenerationError(f"expert scored {ep.score} on {spec.name} seed {ep.seed}")
        episodes.append(ep)
    return episodes


def _header(ep: Episode) -> dict:
    spec = get_task(ep.task)
    return {
        "format": FORMAT,
        "version": VERSION,
        "task": ep.task,
        "obs_dim": spec.obs_dim,
        "action_dim": spec.action_dim,
        "episode_id": int(ep.episode_id),
        "seed": int(ep.seed),
        "score": float(ep.score),
    }


def dumps_episode(ep: Episode) -> str:
    lines = [json.dumps(_header(ep))]
    for t, o, k, a in zip(ep.timesteps, ep.observations, ep.instruction_ids, ep.actions):
        rec = {
            "t": int(t),
            "obs": [float(v) for v in o],
            "instruction_id": int(k),
            "action": [float(v) for v in a],
        }
        lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def loads_episode(text: str) -> Episode:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise DataError("empty episode file")
    head = json.loads(lines[0])
    if head.get("format") != FORMAT or head.get("version") != VERSION:
        raise DataError(f"unsupported episode header {head}")
    recs = [json.loads(ln) for ln in lines[1:]]
    if not recs:
        raise DataError("episode has no frames")
    obs = np.array([r["obs"] for r in recs], dtype=np.float64)
    act = np.array([r["action"] for r in recs], dtype=np.float64)
    if obs.shape[1] != head["obs_dim"] or act.shape[1] != head["action_dim"]:
        raise DataError("record dimensions disagree with header")
    return Episode(
        head["episode_id"],
        head["task"],
        np.array([r["t"] for r in recs], dtype=np.int64),
        obs,
        np.array([r["instruction_id"] for r in recs], dtype=np.int64),
        act,
        head.get("seed", 0),
        head.get("score", 0.0),
    )


def write_episodes(episodes: list[Episode], out_dir) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = []
    for ep in episodes:
        p = out / f"episode_{ep.episode_id:05d}.jsonl"
        p.write_text(dumps_episode(ep))
        paths.append(p)
    return paths


def read_episodes(in_dir) -> list[Episode]:
    paths = sorted(Path(in_dir).glob("episode_*.jsonl"))
    if not paths:
        raise DataError(f"no episode files in {in_dir}")
    return [loads_episode(p.read_text()) for p in paths]
