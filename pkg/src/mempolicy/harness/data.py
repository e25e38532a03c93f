"""Episode-grouped streaming batches.

Frames are read from a queue formed by concatenating episodes: a batch takes
the next ``batch_size`` frames, so it stays inside one episode when it can
and otherwise spills into the following episode. The queue runs across
epoch boundaries; with shuffling on, each epoch visits episodes in an order
fixed by ``(shuffle_seed, epoch)``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import DataError


@dataclass(frozen=True)
class Frame:
    episode: int  # index into the dataset
    t: int  # frame index within the episode


@dataclass
class Batch:
    step: int
    frames: list

    def segments(self) -> list[tuple[int, int, int]]:
        """Runs of consecutive same-episode frames as (episode, first t, last t)."""
        out = []
        for f in self.frames:
            if out and out[-1][0] == f.episode and out[-1][2] == f.t - 1:
                out[-1] = (f.episode, out[-1][1], f.t)
            else:
                out.append((f.episode, f.t, f.t))
        return out

    def boundaries(self) -> list[int]:
        """Positions in the batch where the bank is reset (a new episode starts)."""
        return [i for i, f in enumerate(self.frames) if i == 0 or f.episode != self.frames[i - 1].episode]


class FrameQueue:
    def __init__(self, lengths, batch_size: int, shuffle_seed: int | None = None):
        lengths = [int(n) for n in lengths]
        if not lengths:
            raise DataError("dataset is empty")
        if min(lengths) < 1:
            raise DataError("every episode needs at least one frame")
        if batch_size < 1:
            raise DataError("batch_size must be >= 1")
        self.lengths = lengths
        self.batch_size = batch_size
        self.shuffle_seed = shuffle_seed
        self.epoch_frames = sum(lengths)
        self._orders: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def order(self, epoch: int) -> np.ndarray:
        if self.shuffle_seed is None:
            return np.arange(len(self.lengths))
        return np.random.default_rng([self.shuffle_seed, epoch]).permutation(len(self.lengths))

    def _epoch(self, epoch: int):
        if epoch not in self._orders:
            order = self.order(epoch)
            starts = np.concatenate([[0], np.cumsum([self.lengths[i] for i in order])])
            self._orders = {epoch: (order, starts)}
        return self._orders[epoch]

    def frame_at(self, position: int) -> Frame:
        epoch, offset = divmod(position, self.epoch_frames)
        order, starts = self._epoch(epoch)
        j = int(np.searchsorted(starts, offset, side="right") - 1)
        return Frame(int(order[j]), int(offset - starts[j]))

    def batch_at(self, step: int) -> Batch:
        """The ``step``-th batch; a pure function of the queue parameters."""
        base = step * self.batch_size
        return Batch(step, [self.frame_at(base + i) for i in range(self.batch_size)])

    def __iter__(self):
        step = 0
        while True:
            yield self.batch_at(step)
            step += 1


def build_batches(dataset, batch_size: int, rng=None, n_batches: int | None = None):
    """Yield streaming-queue batches over ``dataset`` (a list of episodes).

    ``rng`` may be None (fixed order), an int seed, or a Generator (a seed is
    drawn from it once). Stops after one pass when ``n_batches`` is None.
    """
    if isinstance(rng, np.random.Generator):
        rng = int(rng.integers(2**31))
    queue = FrameQueue([len(ep) for ep in dataset], batch_size, rng)
    if n_batches is None:
        n_batches = -(-queue.epoch_frames // batch_size)
    for step in range(n_batches):
        yield queue.batch_at(step)


def action_chunk(actions: np.ndarray, t: int, horizon: int, pad: np.ndarray) -> np.ndarray:
    """Actions t..t+horizon-1, padded past the episode end with ``pad``."""
    chunk = actions[t : t + horizon]
    if len(chunk) < horizon:
        chunk = np.concatenate([chunk, np.tile(pad, (horizon - len(chunk), 1))])
    return chunk
