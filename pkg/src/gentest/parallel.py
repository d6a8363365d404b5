"""Order-preserving task execution over a process pool."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

ENV_WORKERS = "GENTEST_WORKERS"


def default_workers() -> int:
    env = os.environ.get(ENV_WORKERS)
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def run_tasks(fn, items, workers: int | None = 1) -> list:
    """``[fn(item) for item in items]``, optionally spread over processes.

    Results come back in input order, so outputs do not depend on scheduling.
    """
    items = list(items)
    workers = default_workers() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items, chunksize=chunk))
