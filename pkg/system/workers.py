"""Bounded worker pool for independent harness tasks."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

from system.config import resolve_threads
from system.errors import HarnessError, NoisyCPError
from system.logger import get_logger

LOGGER = get_logger("workers")

T = TypeVar("T")


class WorkerPool:
    """Runs named tasks on up to ``threads`` workers and returns results in task order.

    Results never depend on scheduling: each task owns its inputs (including
    its seed) and the caller receives them indexed by submission position.
    """

    def __init__(self, threads: int | None = None) -> None:
        self._threads = resolve_threads(threads)

    @property
    def threads(self) -> int:
        return self._threads

    def map(self, name: str, target: Callable[[int], T], count: int) -> List[T]:
        """Evaluate ``target(i)`` for ``i in range(count)``."""
        return self.run(name, [lambda i=i: target(i) for i in range(count)])

    def run(self, name: str, tasks: Sequence[Callable[[], T]]) -> List[T]:
        if not tasks:
            return []
        if self._threads == 1 or len(tasks) == 1:
            return [self._guard(name, index, task) for index, task in enumerate(tasks)]

        LOGGER.debug("%s: %d tasks on %d workers", name, len(tasks), self._threads)
        with ThreadPoolExecutor(
            max_workers=min(self._threads, len(tasks)),
            thread_name_prefix=name,
        ) as executor:
            futures = [
                executor.submit(self._guard, name, index, task)
                for index, task in enumerate(tasks)
            ]
            return [future.result() for future in futures]

    @staticmethod
    def _guard(name: str, index: int, task: Callable[[], T]) -> T:
        try:
            return task()
        except NoisyCPError:
            raise
        except Exception as exc:  # pylint: disable=broad-except
            LOGGER.exception("Worker %s[%d] crashed: %s", name, index, exc)
            raise HarnessError(f"{name} task {index} failed: {exc}") from exc
