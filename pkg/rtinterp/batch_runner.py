from __future__ import annotations

"""Thread-pool fan-out for per-target work (tracing, interpolation, evaluation).

Every submitted item receives a monotonically increasing sequence number so
:meth:`BatchRunner.finalise` can hand results back in submission order.  The
output therefore never depends on the number of worker threads.

Recoverable domain errors (by default any :class:`RtInterpError`) are caught
per item and reported in the :class:`ItemOutcome`; everything else propagates
out of :meth:`finalise`.
"""

import logging
from concurrent.futures import Future, ThreadPoolExecutor
from dataclasses import dataclass
from typing import Callable, Dict, Generic, Iterable, List, Optional, Tuple, Type, TypeVar

from rtinterp.errors import RtInterpError

__all__ = [
    "ItemOutcome",
    "BatchRunner",
    "run_batch",
]

T = TypeVar("T")
R = TypeVar("R")


@dataclass(frozen=True)
class ItemOutcome(Generic[T, R]):
    seq: int
    item: T
    value: Optional[R] = None
    error: Optional[BaseException] = None

    @property
    def ok(self) -> bool:
        return self.error is None


class BatchRunner(Generic[T, R]):  # pylint: disable=too-few-public-methods
    """Run *task* over submitted items on a small thread pool.

    With ``max_workers=1`` the items run inline on the calling thread, which
    keeps tracebacks readable and avoids pool start-up for tiny batches.
    """

    def __init__(
        self,
        task: Callable[[T], R],
        *,
        max_workers: int = 1,
        recoverable: Tuple[Type[BaseException], ...] = (RtInterpError,),
    ) -> None:
        if max_workers < 1:
            raise ValueError("max_workers must be >= 1")
        self._task = task
        self._recoverable = recoverable
        self._seq: int = 0
        self._items: Dict[int, T] = {}
        self._futures: Dict[int, Future] = {}
        self._inline: Dict[int, ItemOutcome[T, R]] = {}
        self._executor: Optional[ThreadPoolExecutor] = (
            ThreadPoolExecutor(max_workers=max_workers, thread_name_prefix="rtinterp") if max_workers > 1 else None
        )
        self._log = logging.getLogger(self.__class__.__name__)

    # ------------------------------------------------------------------
    # Submission
    # ------------------------------------------------------------------
    def _guarded(self, seq: int, item: T) -> ItemOutcome[T, R]:
        try:
            return ItemOutcome(seq=seq, item=item, value=self._task(item))
        except self._recoverable as exc:
            self._log.warning("Item seq=%d failed: %s", seq, exc)
            return ItemOutcome(seq=seq, item=item, error=exc)

    def submit(self, item: T) -> int:  # noqa: D401 – imperative API
        """Schedule *item*; returns its sequence number."""
        seq = self._seq
        self._seq += 1
        self._items[seq] = item
        if self._executor is None:
            self._inline[seq] = self._guarded(seq, item)
        else:
            self._futures[seq] = self._executor.submit(self._guarded, seq, item)
        return seq

    # ------------------------------------------------------------------
    # Finalisation
    # ------------------------------------------------------------------
    def finalise(self, *, timeout_per_item: float | None = None) -> List[ItemOutcome[T, R]]:  # noqa: D401
        """Wait for all items and return their outcomes in submission order."""
        self._log.debug("Finalising batch – %d items", self._seq)
        outcomes: List[ItemOutcome[T, R]] = []
        for seq in range(self._seq):
            if seq in self._inline:
                outcomes.append(self._inline[seq])
            else:
                outcomes.append(self._futures[seq].result(timeout=timeout_per_item))
        failed = sum(1 for o in outcomes if not o.ok)
        if failed:
            self._log.info("Batch finished: %d ok, %d failed", len(outcomes) - failed, failed)
        return outcomes

    def close(self) -> None:  # noqa: D401 – imperative API
        if self._executor is not None:
            self._executor.shutdown(wait=True)

    def __enter__(self) -> "BatchRunner[T, R]":
        return self

    def __exit__(self, exc_type, exc_value, traceback):
        self.close()
        return False


def run_batch(
    task: Callable[[T], R],
    items: Iterable[T],
    *,
    max_workers: int = 1,
    recoverable: Tuple[Type[BaseException], ...] = (RtInterpError,),
) -> List[ItemOutcome[T, R]]:
    """Convenience wrapper: submit every item, finalise, close."""
    with BatchRunner(task, max_workers=max_workers, recoverable=recoverable) as runner:
        for item in items:
            runner.submit(item)
        return runner.finalise()
