"""Frequency-admitted hot tier for embedding rows.

Row popularity is estimated with a count-min sketch over a sliding window of
recent access batches. After each batch the hot set becomes the
`capacity` rows with the highest estimates (ties go to the smaller row key),
so less frequent rows are evicted first. Everything is a pure function of the
access sequence.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from ..hasher import hash_grams, splitmix64


@dataclass
class CountMinSketch:
    width: int = 1 << 16
    depth: int = 4
    seed: int = 0
    counts: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        self.counts = np.zeros((self.depth, self.width), dtype=np.int64)
        self._seeds = [splitmix64(self.seed + i) for i in range(self.depth)]

    def _cells(self, keys: np.ndarray) -> list[np.ndarray]:
        k = np.asarray(keys, dtype=np.uint64).reshape(-1, 1)
        return [hash_grams(k, s, self.width) for s in self._seeds]

    def add(self, keys, weight: int = 1) -> None:
        for row, cells in zip(self.counts, self._cells(keys)):
            np.add.at(row, cells, weight)

    def estimate(self, keys) -> np.ndarray:
        keys = np.asarray(keys)
        if keys.size == 0:
            return np.zeros(0, dtype=np.int64)
        return np.min([row[cells] for row, cells in zip(self.counts, self._cells(keys))], axis=0)


class HotTier:
    """Hot-tier state; `capacity` counts rows, keys are non-negative integers."""

    def __init__(self, capacity: int, window: int = 64, sketch_width: int = 1 << 16,
                 sketch_depth: int = 4, seed: int = 0):
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        self.capacity = int(capacity)
        self.window = int(window)
        self.sketch = CountMinSketch(sketch_width, sketch_depth, seed)
        self.history: deque[np.ndarray] = deque()
        self.hot = np.zeros(0, dtype=np.int64)  # sorted keys

    def contains(self, keys) -> np.ndarray:
        keys = np.asarray(keys, dtype=np.int64)
        if self.hot.size == 0:
            return np.zeros(keys.shape, dtype=bool)
        pos = np.searchsorted(self.hot, keys).clip(max=self.hot.size - 1)
        return self.hot[pos] == keys

    def __len__(self) -> int:
        return int(self.hot.size)


def cache_admit_evict(tier: HotTier, accessed) -> HotTier:
    """Record one batch of accesses and recompute the hot set in place."""
    batch = np.asarray(accessed, dtype=np.int64).reshape(-1)
    tier.sketch.add(batch)
    tier.history.append(batch)
    while len(tier.history) > tier.window:
        tier.sketch.add(tier.history.popleft(), weight=-1)
    if tier.capacity == 0:
        tier.hot = np.zeros(0, dtype=np.int64)
        return tier

    in_window = np.unique(np.concatenate(list(tier.history)))
    est = tier.sketch.estimate(in_window)
    # incumbents that aged out of the window rank after every windowed row
    stale = np.setdiff1d(tier.hot, in_window, assume_unique=True)
    keys = np.concatenate([in_window, stale])
    score = np.concatenate([est, np.zeros(stale.size, dtype=np.int64)])
    if keys.size > tier.capacity:
        order = np.lexsort((keys, -score))[:tier.capacity]
        keys = keys[order]
    tier.hot = np.sort(keys)
    return tier
