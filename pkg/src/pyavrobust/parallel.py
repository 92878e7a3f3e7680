from __future__ import annotations

import logging
import os
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, TypeVar

import numpy as np

T = TypeVar("T")
R = TypeVar("R")

THREADS_ENV = "AVROBUST_THREADS"


def thread_count() -> int:
    """
    Upper bound on worker threads, read from the ``AVROBUST_THREADS`` env var.

    Returns
    -------
    count: int
        1 when the variable is unset or invalid.
    """
    raw = os.environ.get(THREADS_ENV, "1")
    try:
        count = int(raw)
    except ValueError:
        logging.warning(f"Ignoring {THREADS_ENV}={raw!r}: not an integer.")
        return 1
    return max(1, count)


def parallel_map(func: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """
    Order-preserving map over independent work items.

    Every item must carry its own seed; results do not depend on the number
    of threads.
    """
    items = list(items)
    workers = min(thread_count(), len(items))
    if workers <= 1:
        return [func(item) for item in items]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(func, items))


def derive_seed(*keys: int) -> int:
    """Stable 32-bit seed for a work item identified by integer ``keys``."""
    return int(np.random.SeedSequence([int(k) for k in keys]).generate_state(1)[0])
