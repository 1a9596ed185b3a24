"""
Timing utilities for wall-clock budgets and logging execution durations.
"""

import time
import logging
from contextlib import contextmanager

logger = logging.getLogger("pisr")


class Stopwatch:
    """Monotonic elapsed-time counter used for search wall budgets.

    Example
    -------
    clock = Stopwatch()
    ...
    if clock.elapsed() > 60:
        stop()
    """

    def __init__(self) -> None:
        self._start = time.perf_counter()

    def elapsed(self) -> float:
        return time.perf_counter() - self._start

    def exceeded(self, limit: float | None) -> bool:
        return limit is not None and self.elapsed() >= limit


@contextmanager
def time_block(label: str):
    """Context manager to measure execution time of a block.

    Example
    -------
    with time_block("search"):
        result = run_search(config)
    """
    start = time.perf_counter()
    try:
        yield
    finally:
        elapsed = (time.perf_counter() - start) * 1000
        logger.info("%s took %.2f ms", label, elapsed)
