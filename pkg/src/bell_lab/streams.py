"""Counter-based, splittable random streams.

Every random draw in the package comes from a Philox generator keyed by
``(seed, *key)``.  Work is cut into blocks whose keys do not depend on the
number of workers, so results are identical for any worker count.
"""

from __future__ import annotations

import zlib
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

import numpy as np

from .errors import InputError

T = TypeVar("T")
R = TypeVar("R")

SEED_MAX = 2**64 - 1


def tag(name: str) -> int:
    """Stable integer id for a named stream."""
    return zlib.crc32(name.encode("utf-8"))


def check_seed(seed: int) -> int:
    seed = int(seed)
    if not 0 <= seed <= SEED_MAX:
        raise InputError(f"seed must be a 64-bit unsigned integer, got {seed}")
    return seed


def substream(seed: int, *key: int | str) -> np.random.Generator:
    """Independent generator for the stream addressed by ``key``."""
    spawn_key = tuple(tag(k) if isinstance(k, str) else int(k) for k in key)
    ss = np.random.SeedSequence(check_seed(seed), spawn_key=spawn_key)
    return np.random.Generator(np.random.Philox(ss))


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int = 1) -> list[R]:
    """Ordered map over ``items``; ``workers > 1`` uses a thread pool."""
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def blocks(total: int, size: int) -> Sequence[tuple[int, int]]:
    """(start, stop) ranges of at most ``size`` covering ``range(total)``."""
    return [(s, min(s + size, total)) for s in range(0, total, size)]
