"""
Parallel Batch Processing Utilities
===================================

Runs independent work items (frames, videos, seeds) on a thread pool while
keeping results in input order, so outputs never depend on scheduling.
numpy and OpenCV release the GIL in their inner loops, which is where the
pipeline spends its time.
"""

import logging
import os
from concurrent.futures import ThreadPoolExecutor, as_completed
from dataclasses import dataclass
from typing import Any, Callable, Generic, Iterable, List, Optional, Sequence, TypeVar

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

ProgressCallback = Callable[[int, int, str], None]


@dataclass
class TaskOutcome(Generic[R]):
    """Result of one isolated task: a value on success, the exception otherwise."""

    index: int
    success: bool
    value: Optional[R] = None
    error: Optional[BaseException] = None


def default_worker_count() -> int:
    return max(1, min(8, os.cpu_count() or 1))


# ============================================================================
# PARALLEL MAPPER
# ============================================================================

class ParallelMapper:
    """
    Maps a function over items with bounded concurrency.

    max_workers=1 runs inline without an executor; any other count produces
    identical results in identical order.
    """

    def __init__(
        self,
        max_workers: Optional[int] = None,
        progress_callback: Optional[ProgressCallback] = None
    ):
        """
        Initialize mapper.

        Args:
            max_workers: Worker cap (default: min(8, CPU count))
            progress_callback: Optional callback(done, total, message)
        """
        self.max_workers = max(1, int(max_workers or default_worker_count()))
        self.progress_callback = progress_callback

    def _report(self, done: int, total: int, message: str) -> None:
        if self.progress_callback:
            self.progress_callback(done, total, message)

    def map(self, func: Callable[[T], R], items: Iterable[T], label: str = "items") -> List[R]:
        """
        Apply func to every item; the first exception propagates.

        Returns:
            Results in input order
        """
        items = list(items)
        total = len(items)
        if self.max_workers == 1 or total <= 1:
            results = []
            for i, item in enumerate(items):
                results.append(func(item))
                self._report(i + 1, total, f"Processed {i + 1}/{total} {label}")
            return results

        results: List[Any] = [None] * total
        with ThreadPoolExecutor(max_workers=self.max_workers) as executor:
            futures = {executor.submit(func, item): i for i, item in enumerate(items)}
            done = 0
            for future in as_completed(futures):
                results[futures[future]] = future.result()
                done += 1
                self._report(done, total, f"Processed {done}/{total} {label}")
        return results

    def run_isolated(
        self,
        func: Callable[[T], R],
        items: Sequence[T],
        label: str = "tasks"
    ) -> List[TaskOutcome[R]]:
        """
        Apply func to every item without letting one failure stop the rest.

        Returns:
            One TaskOutcome per item, in input order
        """
        def guarded(pair):
            index, item = pair
            try:
                return TaskOutcome(index=index, success=True, value=func(item))
            except Exception as e:
                logger.warning(f"{label} item {index} failed: {type(e).__name__}: {e}")
                return TaskOutcome(index=index, success=False, error=e)

        outcomes = self.map(guarded, list(enumerate(items)), label)
        failed = sum(not o.success for o in outcomes)
        if failed:
            logger.info(f"{failed}/{len(outcomes)} {label} failed")
        return outcomes
