"""Two-stream timestamped memory bank and its consolidation rules."""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConfigError, DataError, OrderingError

STREAMS = ("perceptual", "cognitive")
SNAPSHOT_FORMAT = "mempolicy-bank"
SNAPSHOT_VERSION = 1


@dataclass(frozen=True)
class MemoryEntry:
    stream: str
    value: np.ndarray
    timestep: float


@dataclass
class MemoryBank:
    capacity: int = 16
    policy: str = "merge"  # or "fifo"
    perceptual: list = field(default_factory=list)
    cognitive: list = field(default_factory=list)
    # (stream, index) of each merge made by the latest consolidate() call
    last_merges: list = field(default_factory=list)
    # episode the contents belong to; harness code asserts on it
    owner: object = None

    def __post_init__(self):
        if self.capacity < 1:
            raise ConfigError("bank capacity must be positive")
        if self.policy not in ("merge", "fifo"):
            raise ConfigError(f"unknown consolidation policy {self.policy!r}")

    def stream(self, name: str) -> list:
        return getattr(self, name)

    def __len__(self) -> int:
        return len(self.cognitive)

    def is_empty(self) -> bool:
        return not self.perceptual and not self.cognitive

    def latest_timestep(self) -> float:
        ts = [e.timestep for s in STREAMS for e in self.stream(s)]
        return max(ts) if ts else -np.inf

    def insert(self, perceptual: np.ndarray, cognitive: np.ndarray, timestep: float) -> None:
        if timestep <= self.latest_timestep():
            raise OrderingError(
                f"timestep {timestep} is not after the latest stored step {self.latest_timestep()}"
            )
        t = float(timestep)
        self.perceptual.append(MemoryEntry("perceptual", np.array(perceptual, copy=True), t))
        self.cognitive.append(MemoryEntry("cognitive", np.array(cognitive, copy=True), t))

    def copy(self) -> "MemoryBank":
        return MemoryBank(
            self.capacity, self.policy, list(self.perceptual), list(self.cognitive), owner=self.owner
        )


def cosine(a: np.ndarray, b: np.ndarray) -> float:
    a, b = a.reshape(-1), b.reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        return 0.0
    return float(a @ b / (na * nb))


TIE_TOL = 1e-12


def merge_index(entries: list) -> int:
    """Index i maximising cos(v_i, v_{i+1}); the smallest index wins ties.

    Similarities within ``TIE_TOL`` of the maximum count as tied, so rounding
    in the dot products cannot reorder exactly-equal pairs.
    """
    sims = np.array([cosine(entries[i].value, entries[i + 1].value) for i in range(len(entries) - 1)])
    return int(np.flatnonzero(sims >= sims.max() - TIE_TOL)[0])


def consolidate(bank: MemoryBank) -> MemoryBank:
    """Shrink any stream longer than capacity, in place; returns ``bank``."""
    bank.last_merges = []
    for name in STREAMS:
        entries = bank.stream(name)
        while len(entries) > bank.capacity:
            if bank.policy == "fifo":
                entries.pop(0)
                bank.last_merges.append((name, -1))
                continue
            i = merge_index(entries)
            a, b = entries[i], entries[i + 1]
            merged = MemoryEntry(name, (a.value + b.value) / 2, (a.timestep + b.timestep) / 2)
            entries[i : i + 2] = [merged]
            bank.last_merges.append((name, i))
    return bank


def reset(bank: MemoryBank) -> MemoryBank:
    bank.perceptual.clear()
    bank.cognitive.clear()
    bank.last_merges = []
    bank.owner = None
    return bank


def dumps_bank(bank: MemoryBank) -> str:
    head = {
        "format": SNAPSHOT_FORMAT,
        "version": SNAPSHOT_VERSION,
        "capacity": bank.capacity,
        "policy": bank.policy,
    }
    lines = [json.dumps(head)]
    for name in STREAMS:
        for e in bank.stream(name):
            rec = {
                "stream": name,
                "timestep": float(e.timestep),
                "shape": list(e.value.shape),
                "values": [float(v) for v in e.value.reshape(-1)],
            }
            lines.append(json.dumps(rec))
    return "\n".join(lines) + "\n"


def loads_bank(text: str) -> MemoryBank:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    head = json.loads(lines[0])
    if head.get("format") != SNAPSHOT_FORMAT:
        raise DataError("not a memory bank snapshot")
    bank = MemoryBank(head["capacity"], head["policy"])
    for ln in lines[1:]:
        rec = json.loads(ln)
        value = np.array(rec["values"], dtype=np.float64).reshape(rec["shape"])
        bank.stream(rec["stream"]).append(MemoryEntry(rec["stream"], value, rec["timestep"]))
    return bank
