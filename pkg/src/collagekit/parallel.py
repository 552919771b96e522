"""Deterministic per-sample RNG streams and a worker-count-independent map.

Every generator derives one RNG per output sample from (seed, epoch, index),
so results do not depend on how work is spread across processes.
"""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

import numpy as np

WORKERS_ENV = "COLLAGEKIT_WORKERS"


def sample_rng(seed: int, *stream: int) -> np.random.Generator:
    """Independent generator for one (seed, epoch, index, ...) work item."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), *map(int, stream)]))


def default_workers() -> int:
    value = os.environ.get(WORKERS_ENV, "")
    try:
        return max(1, int(value))
    except ValueError:
        return 1


_SHARED = None
_FN = None


def _init_worker(fn, shared) -> None:
    global _FN, _SHARED
    _FN, _SHARED = fn, shared


def _run_item(item):
    return _FN(_SHARED, item)


def deterministic_map(fn, items, workers: int, shared=None) -> list:
    """Apply ``fn(shared, item)`` over items, preserving item order.

    ``fn`` must be a picklable module-level function and must draw randomness
    only from per-item seeds so the result is identical for any worker count.
    """
    items = list(items)
    if workers <= 1 or len(items) <= 1:
        return [fn(shared, item) for item in items]
    with ProcessPoolExecutor(max_workers=workers,
                             initializer=_init_worker,
                             initargs=(fn, shared)) as pool:
        return list(pool.map(_run_item, items))
