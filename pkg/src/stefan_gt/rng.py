"""Counter-based random streams.

Every stream is a Philox generator keyed by ``(seed, *key)``, so results do not
depend on how work is split across threads.
"""

from __future__ import annotations

import os
import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, TypeVar

import numpy as np

T = TypeVar("T")


def _tag(k) -> int:
    if isinstance(k, str):
        return zlib.crc32(k.encode())
    return int(k)


def stream(seed: int, *key) -> np.random.Generator:
    ss = np.random.SeedSequence(int(seed) & 0xFFFFFFFFFFFFFFFF, spawn_key=tuple(_tag(k) for k in key))
    return np.random.Generator(np.random.Philox(ss))


def resolve_threads(threads: int | None) -> int:
    if threads:
        return max(1, int(threads))
    env = os.environ.get("STEFAN_GT_THREADS")
    return max(1, int(env)) if env else 1


def ordered_map(fn: Callable[..., T], items: Iterable, threads: int = 1) -> list[T]:
    """Map preserving input order; parallel when threads > 1."""
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))
