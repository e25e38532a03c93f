"""Symbolic point-mass manipulation tasks.

All tasks share a unit-square workspace, a delta-position action clipped to
``VMAX`` per step (Chebyshev), and an interaction radius ``RADIUS``. Three of
the tasks are temporally aliased: after a subgoal completes the arm retracts
to ``HOME`` and the observation carries no completed-subgoal indicator, so the
scene looks the same before and after.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DimensionError, LifecycleError

HOME = np.array([0.5, 0.5])
DOCK = np.array([0.15, 0.85])
VMAX = 0.1
RADIUS = 0.1


@dataclass(frozen=True)
class TaskSpec:
    name: str
    horizon: int
    action_dim: int
    obs_dim: int
    instruction_count: int
    # observation columns that depend on the reset seed
    layout_fields: tuple = ()
    # columns of the action holding a binary channel (press / grip)
    gripper_dims: tuple = ()
    markov: bool = False
    # actions executed per prediction when ensembling is off
    exec_horizon: int = 8


@dataclass
class Observation:
    features: np.ndarray
    instruction_id: int


@dataclass
class EnvState:
    task: TaskSpec
    seed: int
    ee: np.ndarray
    instruction_id: int = 0
    step_count: int = 0
    score: float = 0.0
    done: bool = False
    layout: dict = field(default_factory=dict)
    internal: dict = field(default_factory=dict)


@dataclass
class StepResult:
    observation: Observation
    done: bool
    score_delta: float


def _move(ee: np.ndarray, delta: np.ndarray) -> np.ndarray:
    return np.clip(ee + np.clip(delta, -VMAX, VMAX), 0.0, 1.0)


def _approach(ee: np.ndarray, target: np.ndarray) -> tuple[np.ndarray, bool]:
    """Straight-line step toward ``target``; second value is True on arrival."""
    d = target - ee
    span = np.max(np.abs(d))
    if span <= VMAX:
        return d, True
    return d * (VMAX / span), False


def _sample_points(rng, n, fixed=(), min_sep=0.3, min_fixed=0.25, lo=0.15, hi=0.85):
    while True:
        pts = rng.uniform(lo, hi, size=(n, 2))
        ok = all(np.linalg.norm(p - f) >= min_fixed for p in pts for f in fixed)
        ok = ok and all(
            np.linalg.norm(pts[i] - pts[j]) >= min_sep for i in range(n) for j in range(i + 1, n)
        )
        if ok:
            return pts


def _jittered_points(rng, nominal, jitter, fixed=(), min_sep=0.3, min_fixed=0.25):
    """Nominal slots plus a uniform per-axis offset in [-jitter, jitter], redrawn until separated."""
    nominal = np.asarray(nominal, dtype=np.float64)
    while True:
        pts = np.clip(nominal + rng.uniform(-jitter, jitter, size=nominal.shape), 0.05, 0.95)
        ok = all(np.linalg.norm(p - f) >= min_fixed for p in pts for f in fixed)
        ok = ok and all(
            np.linalg.norm(pts[i] - pts[j]) >= min_sep for i in range(len(pts)) for j in range(i + 1, len(pts))
        )
        if ok:
            return pts


def _nearest(ee, points, candidates):
    best, best_d = None, RADIUS
    for i in candidates:
        d = float(np.linalg.norm(ee - points[i]))
        if d <= best_d:
            best, best_d = i, d
    return best


class _Task:
    spec: TaskSpec

    def reset(self, seed: int) -> EnvState:
        raise NotImplementedError

    def features(self, s: EnvState) -> np.ndarray:
        raise NotImplementedError

    def transition(self, s: EnvState, action: np.ndarray) -> float:
        raise NotImplementedError

    def expert(self, s: EnvState) -> np.ndarray:
        raise NotImplementedError


class SeqPushButtons(_Task):
    """Push three buttons in the instructed colour order.

    Buttons are listed in fixed colour order (blue, pink, green). Each colour
    sits at its own table slot, jittered per episode. The instruction id
    selects one of three orders. A press outside the expected order ends the
    episode.
    """

    ORDERS = ((0, 1, 2), (0, 2, 1), (2, 0, 1))
    SLOTS = ((0.2, 0.2), (0.8, 0.2), (0.5, 0.85))
    JITTER = 0.08
    spec = TaskSpec(
        "seq_push_buttons", 60, 3, 8, 3, layout_fields=tuple(range(2, 8)), gripper_dims=(2,), exec_horizon=1
    )

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        buttons = _jittered_points(rng, self.SLOTS, self.JITTER, fixed=(HOME,))
        instr = int(rng.integers(3))
        return EnvState(
            self.spec, seed, HOME.copy(), instr,
            layout={"buttons": buttons, "order": self.ORDERS[instr]},
            internal={"pressed": 0},
        )

    def features(self, s):
        return np.concatenate([s.ee, s.layout["buttons"].reshape(-1)])

    def transition(self, s, action):
        s.ee = _move(s.ee, action[:2])
        if action[2] <= 0:
            return 0.0
        hit = _nearest(s.ee, s.layout["buttons"], range(3))
        if hit is None:
            return 0.0
        n = s.internal["pressed"]
        if hit != s.layout["order"][n]:
            s.done = True
            return 0.0
        s.internal["pressed"] = n + 1
        s.ee = HOME.copy()
        if n + 1 == 3:
            s.done = True
            return 0.4
        return 0.3

    def expert(self, s):
        target = s.layout["buttons"][s.layout["order"][s.internal["pressed"]]]
        d, arrive = _approach(s.ee, target)
        return np.array([d[0], d[1], 1.0 if arrive else -1.0])


class PickPlaceOrder(_Task):
    """Carry three objects to the basket in a fixed order.

    The observation lists the objects' table slots, the basket, the arm and
    a holding bit. Whether a slot is still occupied is not observed (objects
    in the basket are hidden by it), so progress is aliased once the arm
    retracts. Reaching into any slot other than the next one in order ends
    the episode.
    """

    spec = TaskSpec(
        "pick_place_order", 60, 3, 11, 1, layout_fields=tuple(range(3, 11)), gripper_dims=(2,), exec_horizon=1
    )

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        pts = _sample_points(rng, 4, fixed=(HOME,))
        return EnvState(
            self.spec, seed, HOME.copy(), 0,
            layout={"slots": pts[:3], "basket": pts[3]},
            internal={"placed": 0, "holding": -1},
        )

    def features(self, s):
        holding = 1.0 if s.internal["holding"] >= 0 else 0.0
        return np.concatenate([s.ee, [holding], s.layout["slots"].reshape(-1), s.layout["basket"]])

    def transition(self, s, action):
        s.ee = _move(s.ee, action[:2])
        grip = action[2] > 0
        n, held = s.internal["placed"], s.internal["holding"]
        if held < 0 and grip:
            # reaching into an emptied slot is an order violation as well
            hit = _nearest(s.ee, s.layout["slots"], range(3))
            if hit is None:
                return 0.0
            if hit != n:
                s.done = True
                return 0.0
            s.internal["holding"] = hit
            return 0.0
        if held >= 0 and not grip:
            s.internal["holding"] = -1
            if np.linalg.norm(s.ee - s.layout["basket"]) <= RADIUS:
                s.internal["placed"] = n + 1
                s.ee = HOME.copy()
                if n + 1 == 3:
                    s.done = True
                    return 0.4
                return 0.3
            # dropped away from the basket: the object returns to its slot
        return 0.0

    def expert(self, s):
        n, held = s.internal["placed"], s.internal["holding"]
        if held < 0:
            d, arrive = _approach(s.ee, s.layout["slots"][n])
            return np.array([d[0], d[1], 1.0 if arrive else -1.0])
        d, arrive = _approach(s.ee, s.layout["basket"])
        return np.array([d[0], d[1], -1.0 if arrive else 1.0])


class GuessWhere(_Task):
    """Cover the block with the cover from the dock, then uncover it.

    The observation holds the arm, a holding bit and the block's table
    marker; the cover itself is not observed. Scoring: grasping the cover
    0.3, covering the block 0.3, uncovering 0.4. Grasping the bare block or
    the empty dock ends the episode.
    """

    spec = TaskSpec(
        "guess_where", 45, 3, 5, 1, layout_fields=(3, 4), gripper_dims=(2,), exec_horizon=1
    )

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        block = _sample_points(rng, 1, fixed=(HOME, DOCK))[0]
        return EnvState(
            self.spec, seed, HOME.copy(), 0,
            layout={"block": block},
            internal={"cover": "dock", "grasped_once": False},
        )

    def features(self, s):
        holding = 1.0 if s.internal["cover"] == "held" else 0.0
        return np.concatenate([s.ee, [holding], s.layout["block"]])

    def transition(self, s, action):
        s.ee = _move(s.ee, action[:2])
        grip = action[2] > 0
        cover = s.internal["cover"]
        near_block = np.linalg.norm(s.ee - s.layout["block"]) <= RADIUS
        near_dock = np.linalg.norm(s.ee - DOCK) <= RADIUS
        if cover != "held" and grip:
            if cover == "block" and near_block:
                s.internal["cover"] = "held"
                s.done = True
                return 0.4
            if cover == "dock" and near_dock:
                s.internal["cover"] = "held"
                if not s.internal["grasped_once"]:
                    s.internal["grasped_once"] = True
                    return 0.3
                return 0.0
            if (cover == "dock" and near_block) or (cover == "block" and near_dock):
                # grasping the bare block, or an empty dock, fails the attempt
                s.done = True
            return 0.0
        if cover == "held" and not grip:
            if near_block:
                s.internal["cover"] = "block"
                s.ee = HOME.copy()
                return 0.3
            s.internal["cover"] = "dock"
        return 0.0

    def expert(self, s):
        cover = s.internal["cover"]
        if cover == "dock":
            d, arrive = _approach(s.ee, DOCK)
            return np.array([d[0], d[1], 1.0 if arrive else -1.0])
        d, arrive = _approach(s.ee, s.layout["block"])
        if cover == "held":
            return np.array([d[0], d[1], -1.0 if arrive else 1.0])
        return np.array([d[0], d[1], 1.0 if arrive else -1.0])


class MarkovReach(_Task):
    """Fully observed reach: arm and target are both in the observation."""

    spec = TaskSpec("markov_reach", 20, 2, 4, 1, layout_fields=(0, 1, 2, 3), markov=True, exec_horizon=8)

    def reset(self, seed):
        rng = np.random.default_rng(seed)
        pts = _sample_points(rng, 2, min_sep=0.3)
        return EnvState(self.spec, seed, pts[0].copy(), 0, layout={"target": pts[1]})

    def features(self, s):
        return np.concatenate([s.ee, s.layout["target"]])

    def transition(self, s, action):
        s.ee = _move(s.ee, action[:2])
        if np.linalg.norm(s.ee - s.layout["target"]) <= RADIUS:
            s.done = True
            return 1.0
        return 0.0

    def expert(self, s):
        d, _ = _approach(s.ee, s.layout["target"])
        return d


TASKS = {t.spec.name: t for t in (SeqPushButtons(), PickPlaceOrder(), GuessWhere(), MarkovReach())}


def get_task(name: str) -> TaskSpec:
    if name not in TASKS:
        raise ConfigError(f"unknown task {name!r}; choose from {sorted(TASKS)}")
    return TASKS[name].spec


def _impl(spec: TaskSpec) -> _Task:
    if spec.name not in TASKS:
        raise ConfigError(f"unknown task {spec.name!r}")
    return TASKS[spec.name]


def observe(state: EnvState) -> Observation:
    return Observation(_impl(state.task).features(state).astype(np.float64), state.instruction_id)


def env_reset(task: TaskSpec | str, seed: int) -> tuple[EnvState, Observation]:
    spec = get_task(task) if isinstance(task, str) else task
    state = _impl(spec).reset(int(seed))
    return state, observe(state)


def env_step(state: EnvState, action) -> StepResult:
    if state.done or state.step_count >= state.task.horizon:
        raise LifecycleError("env_step called on a finished episode")
    action = np.asarray(action, dtype=np.float64)
    if action.shape != (state.task.action_dim,):
        raise DimensionError(f"{state.task.name} expects action of shape ({state.task.action_dim},)")
    delta = _impl(state.task).transition(state, action)
    state.score += delta
    state.step_count += 1
    if state.step_count >= state.task.horizon:
        state.done = True
    return StepResult(observe(state), state.done, delta)


def scripted_expert(state: EnvState) -> np.ndarray:
    """Privileged controller: heads for the next uncompleted subgoal."""
    return _impl(state.task).expert(state)


def idle_action(spec: TaskSpec) -> np.ndarray:
    a = np.zeros(spec.action_dim)
    for g in spec.gripper_dims:
        a[g] = -1.0
    return a
