"""Order-preserving process pool used by the ensemble loops."""

from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor

WORKERS_ENV = "WND_WORKERS"


def worker_count() -> int:
    """Worker count from ``WND_WORKERS`` (default 1, i.e. run in-process)."""
    raw = os.environ.get(WORKERS_ENV, "").strip()
    if not raw:
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"{WORKERS_ENV} must be a positive integer, got {raw!r}")
    return n


def pmap(fn, items, workers: int | None = None) -> list:
    """``[fn(x) for x in items]``, optionally fanned out over processes.

    Results come back in input order, so any later reduction is done in a
    fixed order and the outcome does not depend on the worker count.
    """
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) < 2:
        return [fn(x) for x in items]
    chunk = max(1, len(items) // (4 * workers))
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, items, chunksize=chunk))
