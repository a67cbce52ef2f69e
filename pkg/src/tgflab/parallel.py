"""Ordered task fan-out capped by the TGF_THREADS environment variable."""
from __future__ import annotations

import os
from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def worker_count(default: int = 1) -> int:
    raw = os.environ.get("TGF_THREADS")
    if raw is None or raw.strip() == "":
        return default
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TGF_THREADS must be a positive integer, got {raw!r}") from None
    if n < 1:
        raise ValueError(f"TGF_THREADS must be a positive integer, got {raw!r}")
    return n


def parallel_map(fn: Callable[[T], R], items: Iterable[T], workers: int | None = None) -> list[R]:
    """``[fn(x) for x in items]`` with results in input order.

    Tasks share nothing mutable, so running them in worker processes gives
    the same results as the serial loop.
    """
    items = list(items)
    workers = worker_count() if workers is None else workers
    if workers <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ProcessPoolExecutor(max_workers=min(workers, len(items))) as pool:
        return list(pool.map(fn, items))
