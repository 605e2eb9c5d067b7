"""Chunked parallel map with a deterministic merge order.

Results always come back in chunk order, so reductions over them are
reproducible for a fixed worker count; ``workers <= 1`` runs inline.
"""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def default_workers() -> int:
    return os.cpu_count() or 1


def split_chunks(n_items: int, n_chunks: int) -> list[range]:
    """Split range(n_items) into up to n_chunks contiguous, balanced ranges."""
    n_chunks = max(1, min(n_chunks, n_items)) if n_items else 1
    bounds = [round(i * n_items / n_chunks) for i in range(n_chunks + 1)]
    return [range(bounds[i], bounds[i + 1]) for i in range(n_chunks) if bounds[i] < bounds[i + 1]]


def map_chunks(fn: Callable[[T], R], chunks: Sequence[T], workers: int) -> list[R]:
    """Apply ``fn`` to every chunk, in parallel when workers > 1.

    ``fn`` and the chunks must be picklable when running with more than
    one worker.
    """
    if workers <= 1 or len(chunks) <= 1:
        return [fn(c) for c in chunks]
    with ProcessPoolExecutor(max_workers=min(workers, len(chunks))) as pool:
        return list(pool.map(fn, chunks))
