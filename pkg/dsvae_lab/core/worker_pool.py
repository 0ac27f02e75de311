"""Ordered data-parallel execution for evaluation work."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


class WorkerPool:
    """Maps a function over items on ``threads`` workers.

    Results come back in input order whatever the thread count, so any
    reduction over them is deterministic.
    """

    def __init__(self, threads: int = 1, *, logger=None) -> None:
        self.threads = max(1, int(threads))
        self.logger = logger

    def map(self, fn: Callable[[int, T], R], items: Iterable[T]) -> List[R]:
        work: Sequence[T] = list(items)
        if self.threads == 1 or len(work) <= 1:
            return [fn(index, item) for index, item in enumerate(work)]
        if self.logger is not None:
            self.logger.debug("Dispatching %d item(s) to %d worker(s)", len(work), self.threads)
        with ThreadPoolExecutor(max_workers=self.threads, thread_name_prefix="dsvae-worker") as executor:
            futures = [executor.submit(fn, index, item) for index, item in enumerate(work)]
            return [future.result() for future in futures]


__all__ = ["WorkerPool"]
