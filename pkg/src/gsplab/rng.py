"""Counter-based random streams.

Every unit of Monte Carlo work (a batch of samples, a block of paths) draws from
its own Philox stream keyed by ``(seed, tag, index)``. Results therefore depend
only on the seed and the fixed work partition, never on how many workers run.
"""
from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")

_MASK64 = (1 << 64) - 1


@dataclass(frozen=True)
class RngSpec:
    """Seed plus the number of batches Monte Carlo estimators split their work into."""

    seed: int = 0
    stream_count: int = 32

    def __post_init__(self):
        if self.stream_count < 1:
            raise ValueError("stream_count must be positive")

    def generator(self, tag: str, index: int) -> np.random.Generator:
        """Independent generator for work unit ``index`` of the operation ``tag``."""
        tag_id = zlib.crc32(tag.encode()) & 0xFFFFFFFF
        key = np.array([self.seed & _MASK64, (tag_id << 32) | (index & 0xFFFFFFFF)],
                       dtype=np.uint64)
        return np.random.Generator(np.random.Philox(key=key))


def as_rng(rng: RngSpec | int | None) -> RngSpec:
    if rng is None:
        return RngSpec()
    if isinstance(rng, RngSpec):
        return rng
    return RngSpec(seed=int(rng))


def ordered_map(fn: Callable[[int], T], indices: Iterable[int], workers: int = 1) -> list[T]:
    """Apply ``fn`` to each index, possibly in threads; output order follows ``indices``."""
    indices = list(indices)
    if workers <= 1 or len(indices) <= 1:
        return [fn(i) for i in indices]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, indices))


def split_counts(total: int, parts: int) -> list[int]:
    """Fixed partition of ``total`` items into ``parts`` near-equal chunks."""
    base, extra = divmod(total, parts)
    return [base + (1 if i < extra else 0) for i in range(parts)]
