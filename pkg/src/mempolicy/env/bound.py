"""Best score of any memoryless deterministic policy, by exhaustive search.

Each task is abstracted to its event structure: the arm sits at home or at
one of the task's sites, and between events a memoryless policy's motion is
fixed by the observation it starts from. The abstraction keeps exactly the
observed quantities (arm site, holding bit) and hides the progress counter.
A policy is a map from observation class to abstract action ("go to site X
and arrive with the gripper closed/open"); the search assigns actions lazily
the first time a class is met, so only policy fragments that matter are
enumerated.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

from ..errors import CapabilityError, ConfigError
from .tasks import TaskSpec, get_task

MAX_CLASSES = 10**6


@dataclass
class AbstractModel:
    initial: tuple
    actions: list
    observe: Callable
    step: Callable  # (state, action) -> (next_state, reward, done)
    max_steps: int


def _buttons_model(order=(0, 1, 2)) -> AbstractModel:
    # state: (pressed, site); site "home" or button index
    actions = [(b, press) for b in range(3) for press in (True, False)]

    def step(s, a):
        n, _ = s
        b, press = a
        if not press:
            return (n, b), 0.0, False
        if b != order[n]:
            return (n, b), 0.0, True
        if n + 1 == 3:
            return (3, "home"), 0.4, True
        return (n + 1, "home"), 0.3, False

    return AbstractModel((0, "home"), actions, lambda s: s[1], step, 30)


def _pick_place_model() -> AbstractModel:
    # state: (placed, holding, site); sites: slot index or "basket"
    sites = [0, 1, 2, "basket"]
    actions = [(x, grip) for x in sites for grip in (True, False)]

    def step(s, a):
        n, held, _ = s
        x, grip = a
        if held < 0:
            if grip and x != "basket":
                if x != n:
                    return (n, held, x), 0.0, True
                return (n, n, x), 0.0, False
            return (n, held, x), 0.0, False
        if grip:
            return (n, held, x), 0.0, False
        if x == "basket":
            if n + 1 == 3:
                return (3, -1, "home"), 0.4, True
            return (n + 1, -1, "home"), 0.3, False
        return (n, -1, x), 0.0, False

    return AbstractModel((0, -1, "home"), actions, lambda s: (s[2], s[1] >= 0), step, 40)


def _guess_where_model() -> AbstractModel:
    # state: (cover location, grasped_once, site)
    actions = [(x, grip) for x in ("dock", "block") for grip in (True, False)]

    def step(s, a):
        cover, once, _ = s
        x, grip = a
        if cover != "held":
            if not grip:
                return (cover, once, x), 0.0, False
            if cover == "block" and x == "block":
                return ("held", once, x), 0.4, True
            if cover == "dock" and x == "dock":
                return ("held", True, x), (0.0 if once else 0.3), False
            return (cover, once, x), 0.0, True
        if grip:
            return (cover, once, x), 0.0, False
        if x == "block":
            return ("block", once, "home"), 0.3, False
        return ("dock", once, x), 0.0, False

    return AbstractModel(
        ("dock", False, "home"), actions, lambda s: (s[2], s[0] == "held"), step, 30
    )


def _reach_model() -> AbstractModel:
    # fully observed: the only site that scores is the target
    def step(s, a):
        return ("target", 1.0, True) if a == "target" else ("elsewhere", 0.0, False)

    return AbstractModel("start", ["target", "elsewhere"], lambda s: s, step, 5)


def abstract_model(task: TaskSpec | str) -> AbstractModel:
    spec = get_task(task) if isinstance(task, str) else task
    builders = {
        "seq_push_buttons": _buttons_model,
        "pick_place_order": _pick_place_model,
        "guess_where": _guess_where_model,
        "markov_reach": _reach_model,
    }
    if spec.name not in builders:
        raise ConfigError(f"no abstraction for task {spec.name!r}")
    return builders[spec.name]()


def best_memoryless_score(model: AbstractModel) -> tuple[float, dict]:
    """Maximise episode score over deterministic observation -> action maps."""
    best = (-1.0, {})
    n_classes = 0

    def rollout(state, policy, score, steps, seen):
        nonlocal best, n_classes
        while True:
            if steps >= model.max_steps or (state in seen):
                break
            o = model.observe(state)
            if o not in policy:
                n_classes += 1
                if n_classes > MAX_CLASSES:
                    raise CapabilityError("observation-class enumeration exceeds 1e6 entries")
                for a in model.actions:
                    rollout(state, {**policy, o: a}, score, steps, seen)
                return
            seen = seen | {state}
            state, r, done = model.step(state, policy[o])
            score += r
            steps += 1
            if done:
                break
        if score > best[0]:
            best = (score, policy)

    rollout(model.initial, {}, 0.0, 0, frozenset())
    return round(best[0], 12), best[1]


def memoryless_upper_bound(task: TaskSpec | str) -> float:
    return best_memoryless_score(abstract_model(task))[0]
