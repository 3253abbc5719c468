"""Ordered parallel map over independent tasks.

Worker count comes from the caller or the ``NANONMR2D_WORKERS`` environment
variable (default 1). Results are returned in input order, so outputs do not
depend on the number of workers.
"""

from __future__ import annotations

import logging
import os
from collections.abc import Callable, Iterable
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, TypeVar

logger = logging.getLogger(__name__)

WORKERS_ENV = "NANONMR2D_WORKERS"

T = TypeVar("T")
R = TypeVar("R")


def worker_count(workers: Optional[int] = None) -> int:
    """Resolve the worker count.

    Raises:
        ValueError: If the explicit or environment value is not a positive int.
    """
    if workers is None:
        raw = os.environ.get(WORKERS_ENV, "1").strip()
        try:
            workers = int(raw)
        except ValueError:
            raise ValueError(f"Invalid {WORKERS_ENV}='{raw}' (expected positive int).") from None
    if workers <= 0:
        raise ValueError("workers must be > 0")
    return workers


def map_ordered(fn: Callable[[T], R], items: Iterable[T], workers: Optional[int] = None) -> list[R]:
    """Apply ``fn`` to every item, preserving order."""
    items = list(items)
    n = min(worker_count(workers), max(len(items), 1))
    if n == 1:
        return [fn(item) for item in items]
    logger.debug("mapping %d tasks on %d workers", len(items), n)
    with ThreadPoolExecutor(max_workers=n) as pool:
        return list(pool.map(fn, items))
