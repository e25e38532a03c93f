"""Static charts of a training metrics CSV."""

from __future__ import annotations

import csv
from pathlib import Path

import numpy as np

from ..errors import DataError
from .train import METRICS_COLUMNS


def read_metrics(path) -> dict[str, np.ndarray]:
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if reader.fieldnames != METRICS_COLUMNS:
                raise DataError(f"{path}: unexpected header {reader.fieldnames}")
            rows = list(reader)
    except OSError as exc:
        raise DataError(f"cannot read metrics {path}: {exc}") from exc

    def col(name):
        return np.array([float(r[name]) if r[name] != "" else np.nan for r in rows])

    return {name: col(name) for name in ("step", "loss", "grad_norm", "val_score")}


def smooth(x: np.ndarray, window: int = 50) -> np.ndarray:
    if len(x) == 0:
        return x
    window = max(1, min(window, len(x)))
    c = np.cumsum(np.insert(x, 0, 0.0))
    out = np.empty_like(x)
    out[window - 1:] = (c[window:] - c[:-window]) / window
    out[: window - 1] = c[1:window] / np.arange(1, window)
    return out


def plot_metrics(csv_path, out_dir) -> list[Path]:
    """Write ``loss.png`` and, when validation ran, ``val_score.png``."""
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    m = read_metrics(csv_path)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    written = []

    fig, ax = plt.subplots(figsize=(6, 3.5))
    ax.plot(m["step"], m["loss"], lw=0.5, alpha=0.4, label="loss")
    ax.plot(m["step"], smooth(m["loss"]), lw=1.5, label="smoothed")
    ax.set_xlabel("step")
    ax.set_ylabel("diffusion loss")
    ax.set_yscale("log")
    ax.legend()
    fig.tight_layout()
    written.append(out / "loss.png")
    fig.savefig(written[-1], dpi=100)
    plt.close(fig)

    has_val = ~np.isnan(m["val_score"])
    if has_val.any():
        fig, ax = plt.subplots(figsize=(6, 3.5))
        ax.plot(m["step"][has_val], m["val_score"][has_val], marker="o")
        ax.set_xlabel("step")
        ax.set_ylabel("validation mean score")
        ax.set_ylim(-0.05, 1.05)
        fig.tight_layout()
        written.append(out / "val_score.png")
        fig.savefig(written[-1], dpi=100)
        plt.close(fig)
    return written
