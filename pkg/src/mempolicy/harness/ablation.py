"""Ablation runner over the five memory-design axes.

Every variant is trained from the same demonstrations and seeds and then
evaluated on the same layouts, so rows differ only in the varied flag. The
base configuration appears once per axis; it is trained once and reused.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from pathlib import Path

from ..env import generate_demos
from ..errors import ConfigError
from .config import TrainConfig
from .evaluate import evaluate
from .train import train

ABLATION_SCHEMA_VERSION = 1
ABLATION_COLUMNS = ["schema_version", "axis", "variant", "task", "seed", "mean_score", "success_rate"]

# axis -> ordered (variant name, config overrides)
AXES: dict[str, list[tuple[str, dict]]] = {
    "type": [
        ("both", {"use_perceptual": True, "use_cognitive": True}),
        ("cog", {"use_perceptual": False, "use_cognitive": True}),
        ("per", {"use_perceptual": True, "use_cognitive": False}),
    ],
    "length": [
        ("4", {"memory_capacity": 4}),
        ("16", {"memory_capacity": 16}),
        ("64", {"memory_capacity": 64}),
    ],
    "retrieval": [
        ("te", {"use_timestep_pe": True}),
        ("no_te", {"use_timestep_pe": False}),
    ],
    "fusion": [
        ("gate", {"fusion": "gate"}),
        ("add", {"fusion": "add"}),
    ],
    "consolidation": [
        ("merge", {"consolidation": "merge"}),
        ("fifo", {"consolidation": "fifo"}),
    ],
}

# (axis, preferred variant, alternatives, blocking): the ordering each axis is expected to show
DIRECTIONS = [
    ("type", "both", ("cog", "per"), True),
    ("retrieval", "te", ("no_te",), False),
    ("fusion", "gate", ("add",), True),
    ("consolidation", "merge", ("fifo",), True),
]


@dataclass
class AblationRow:
    axis: str
    variant: str
    task: str
    seed: int
    mean_score: float
    success_rate: float

    def as_list(self) -> list:
        return [ABLATION_SCHEMA_VERSION, self.axis, self.variant, self.task, self.seed,
                repr(self.mean_score), repr(self.success_rate)]


def parse_axes(axes) -> list[str]:
    if isinstance(axes, str):
        axes = [a.strip() for a in axes.split(",") if a.strip()]
    axes = list(axes) or list(AXES)
    unknown = [a for a in axes if a not in AXES]
    if unknown:
        raise ConfigError(f"unknown ablation axes {unknown}; choose from {sorted(AXES)}")
    return axes


def score_variant(cfg: TrainConfig, demos, trials: int = 50, out_dir=None, cache: dict | None = None):
    """(mean score, success rate) of ``cfg`` trained on ``demos``, memoised by config fingerprint."""
    cache = {} if cache is None else cache
    key = (cfg.fingerprint(), trials)
    if key not in cache:
        result = train(cfg, demos, out_dir=out_dir)
        report = evaluate(result.checkpoint, cfg.task, trials)
        cache[key] = (report.mean_score, report.success_rate)
    return cache[key]


def run_ablation(base: TrainConfig, axes=(), demos=None, trials: int = 50, out_dir=None,
                 log=None, cache: dict | None = None) -> list[AblationRow]:
    """Train and evaluate every variant of ``axes``; rows come back in axis order.

    Identical resulting configs share one training run, so the base variant
    is not retrained for each axis. Pass ``cache`` to share runs across calls.
    """
    axes = parse_axes(axes)
    demos = demos if demos is not None else generate_demos(base.task, base.n_demos, base.data_seed)
    out = Path(out_dir) if out_dir is not None else None
    cache = {} if cache is None else cache
    rows = []
    for axis in axes:
        for name, overrides in AXES[axis]:
            cfg = base.with_(**overrides)
            if log is not None and (cfg.fingerprint(), trials) not in cache:
                log(f"ablation {axis}={name} ({cfg.fingerprint()})")
            run_dir = out / "runs" / cfg.fingerprint() if out is not None else None
            score, success = score_variant(cfg, demos, trials, run_dir, cache)
            rows.append(AblationRow(axis, name, cfg.task, cfg.seed, score, success))
    if out is not None:
        write_ablation_csv(out / "ablation.csv", rows)
        write_directions_csv(out / "directions.csv", directions(rows))
    return rows


def directions(rows: list[AblationRow]) -> list[dict]:
    """Check each expected ordering that the rows allow; one record per comparison."""
    score = {(r.axis, r.variant): r.mean_score for r in rows}
    found = []
    for axis, better, others, blocking in DIRECTIONS:
        for other in others:
            if (axis, better) in score and (axis, other) in score:
                a, b = score[(axis, better)], score[(axis, other)]
                found.append({
                    "axis": axis, "better": better, "other": other,
                    "better_score": a, "other_score": b, "holds": a >= b, "blocking": blocking,
                })
    return found


def ablation_text(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(ABLATION_COLUMNS)
    w.writerows(r.as_list() for r in rows)
    return buf.getvalue()


def write_ablation_csv(path, rows: list[AblationRow]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(ablation_text(rows))
    return path


def write_directions_csv(path, found: list[dict]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    cols = ["axis", "better", "other", "better_score", "other_score", "holds", "blocking"]
    buf = io.StringIO()
    w = csv.DictWriter(buf, cols, lineterminator="\n")
    w.writeheader()
    w.writerows(found)
    path.write_text(buf.getvalue())
    return path
