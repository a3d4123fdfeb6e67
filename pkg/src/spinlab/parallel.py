"""Deterministic fan-out of independent work chunks.

Work is always split into the same chunks regardless of the worker count,
and results come back in chunk order, so any reduction done by the caller
in that order is bit-identical for 1 or many workers.
"""

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "SPINOMETER_WORKERS"


def default_workers():
    """Worker count from ``$SPINOMETER_WORKERS``, else the CPU count."""
    env = os.environ.get(WORKERS_ENV)
    if env:
        try:
            n = int(env)
        except ValueError:
            raise ValueError(f"{WORKERS_ENV}={env!r} is not an integer") from None
        if n < 1:
            raise ValueError(f"{WORKERS_ENV} must be >= 1")
        return n
    return os.cpu_count() or 1


def chunk_bounds(n_items, chunk_size):
    """[(start, stop), ...] covering range(n_items) in fixed-size pieces."""
    if chunk_size < 1:
        raise ValueError("chunk_size must be positive")
    return [(a, min(a + chunk_size, n_items)) for a in range(0, n_items, chunk_size)]


def map_ordered(func, args_list, workers=None):
    """``[func(*args) for args in args_list]``, optionally in worker processes."""
    workers = default_workers() if workers is None else int(workers)
    if workers < 1:
        raise ValueError("workers must be >= 1")
    if workers == 1 or len(args_list) <= 1:
        return [func(*args) for args in args_list]
    with ProcessPoolExecutor(max_workers=min(workers, len(args_list))) as pool:
        futures = [pool.submit(func, *args) for args in args_list]
        return [f.result() for f in futures]
