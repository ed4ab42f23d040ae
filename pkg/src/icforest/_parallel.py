"""Ordered process-pool map shared by the bench and LOOCV harnesses."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

THREADS_ENV = "ICFOREST_THREADS"


def resolve_threads(threads: int | None = None) -> int:
    """Explicit value, else ``ICFOREST_THREADS``, else 1."""
    if threads is None:
        env = os.environ.get(THREADS_ENV)
        if env:
            try:
                threads = int(env)
            except ValueError:
                raise ValueError(f"{THREADS_ENV} must be an integer, got {env!r}") from None
        else:
            threads = 1
    if threads < 1:
        raise ValueError("threads must be >= 1")
    return threads


def ordered_map(fn, items, threads: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally across worker processes.

    Results come back in input order, so reductions over them do not depend
    on the worker count.
    """
    items = list(items)
    threads = resolve_threads(threads)
    if threads == 1 or len(items) < 2:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(threads, len(items))) as pool:
        return list(pool.map(fn, items))
