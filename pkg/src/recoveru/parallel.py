"""Deterministic process-pool mapping for replicate loops.

Work items carry pre-assigned random seeds, so results are identical for
any worker count; parallelism only changes who computes each item. Items
are dispatched in contiguous chunks and reassembled in submission order.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

_STATE = None
_FN = None


def _init_worker(fn, state) -> None:
    global _FN, _STATE
    _FN = fn
    _STATE = state


def _run_chunk(chunk):
    return [_FN(_STATE, item) for item in chunk]


def map_with_state(fn, state, items, workers: int = 1):
    """Apply ``fn(state, item)`` over ``items``, preserving order.

    ``fn`` must be a module-level function and ``state`` picklable when
    ``workers > 1``; with one worker everything runs in-process. Each
    item must produce the same result regardless of which process runs
    it (i.e. carry its own seed), which makes the output independent of
    ``workers``.
    """
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(state, item) for item in items]
    workers = min(workers, len(items))
    chunk_size = max(1, len(items) // (workers * 4))
    chunks = [
        items[i:i + chunk_size] for i in range(0, len(items), chunk_size)
    ]
    with ProcessPoolExecutor(
        max_workers=workers, initializer=_init_worker, initargs=(fn, state)
    ) as executor:
        nested = list(executor.map(_run_chunk, chunks))
    return [result for chunk in nested for result in chunk]


def default_workers() -> int:
    """A sensible worker count for command-line ``--jobs`` defaults."""
    return min(8, os.cpu_count() or 1)
