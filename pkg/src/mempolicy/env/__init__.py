"""Symbolic non-Markovian manipulation tasks, experts and demo files."""

from .bound import abstract_model, best_memoryless_score, memoryless_upper_bound
from .demos import (
    Episode,
    dumps_episode,
    generate_demos,
    loads_episode,
    read_episodes,
    rollout_expert,
    write_episodes,
)
from .tasks import (
    HOME,
    RADIUS,
    TASKS,
    VMAX,
    EnvState,
    Observation,
    StepResult,
    TaskSpec,
    env_reset,
    env_step,
    get_task,
    idle_action,
    observe,
    scripted_expert,
)

__all__ = [
    "HOME",
    "RADIUS",
    "TASKS",
    "VMAX",
    "EnvState",
    "Episode",
    "Observation",
    "StepResult",
    "TaskSpec",
    "abstract_model",
    "best_memoryless_score",
    "dumps_episode",
    "env_reset",
    "env_step",
    "generate_demos",
    "get_task",
    "idle_action",
    "loads_episode",
    "memoryless_upper_bound",
    "observe",
    "read_episodes",
    "rollout_expert",
    "scripted_expert",
    "write_episodes",
]
