"""Local datasets, streaming windows and mini-batch cursors."""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class Dataset:
    x: np.ndarray
    y: np.ndarray

    def __post_init__(self):
        if len(self.x) != len(self.y):
            raise ValueError(f"x has {len(self.x)} rows but y has {len(self.y)}")

    def __len__(self):
        return len(self.x)

    def take(self, idx) -> "Dataset":
        return Dataset(self.x[idx], self.y[idx])

    @staticmethod
    def concat(parts: list["Dataset"]) -> "Dataset":
        return Dataset(np.concatenate([p.x for p in parts]), np.concatenate([p.y for p in parts]))


class StaticView:
    """A fixed local dataset."""

    def __init__(self, data: Dataset):
        self.data = data
        self.version = 0

    def current(self) -> Dataset:
        return self.data


class StreamWindow:
    """Ring buffer of the most recent ``capacity`` observation blocks (scans)."""

    def __init__(self, capacity: int = 400):
        if capacity < 1:
            raise ValueError("window capacity must be >= 1")
        self.capacity = capacity
        self.blocks: deque[Dataset] = deque(maxlen=capacity)
        self.version = 0
        self._cached: Dataset | None = None

    def __len__(self):
        return len(self.blocks)

    def push(self, block: Dataset):
        self.blocks.append(block)
        self.version += 1
        self._cached = None

    def current(self) -> Dataset:
        if not self.blocks:
            raise ValueError("stream window is empty")
        if self._cached is None:
            self._cached = Dataset.concat(list(self.blocks))
        return self._cached


class UnionView:
    """Concatenation of several views, used by the centralized reference."""

    def __init__(self, views):
        self.views = list(views)
        self._key = None
        self._cached = None

    @property
    def version(self):
        return tuple(v.version for v in self.views)

    def current(self) -> Dataset:
        if self._key != self.version:
            self._cached = Dataset.concat([v.current() for v in self.views])
            self._key = self.version
        return self._cached


class EpochSampler:
    """Mini-batches drawn without replacement from a per-epoch permutation.

    The permutation is redrawn when it is exhausted or when the underlying
    view changes.
    """

    def __init__(self, rng: np.random.Generator):
        self.rng = rng
        self.perm: np.ndarray | None = None
        self.cursor = 0
        self.key = None

    def indices(self, n: int, batch_size: int | None, version=0) -> np.ndarray:
        if n == 0:
            raise ValueError("cannot sample from an empty dataset")
        if batch_size is None or batch_size >= n:
            return np.arange(n)
        key = (n, version)
        if key != self.key or self.cursor + batch_size > n:
            self.perm = self.rng.permutation(n)
            self.cursor = 0
            self.key = key
        idx = self.perm[self.cursor : self.cursor + batch_size]
        self.cursor += batch_size
        return idx


def next_batch(view, sampler: EpochSampler, batch_size: int | None):
    data = view.current()
    idx = sampler.indices(len(data), batch_size, view.version)
    return data.x[idx], data.y[idx]
