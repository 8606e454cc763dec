import threading
from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional

from config.logging import core_logger
from config.settings import THREADS


class BatchManager:
    """
    Runs independent Monte Carlo streams on a thread pool. Results always come
    back in submission order, so reductions over them do not depend on the
    number of workers or on scheduling.
    """

    def __init__(self, max_workers: Optional[int] = None):
        self.max_workers = max(1, max_workers or THREADS)
        self.executor = ThreadPoolExecutor(max_workers=self.max_workers)
        self.futures = {}
        self.batches = 0
        self.lock = threading.Lock()

    def map_ordered(self, task: Callable[[Any], Any], items: Iterable[Any]) -> List[Any]:
        """Submits task(item) for every item and returns the results in item order."""
        items = list(items)

        with self.lock:
            self.batches += 1
            batch = self.batches
            submitted = [(index, self.executor.submit(task, item)) for index, item in enumerate(items)]
            for index, future in submitted:
                self.futures[(batch, index)] = future

        try:
            return [future.result() for _, future in submitted]
        finally:
            self.cleanup(batch, len(items))

    def cleanup(self, batch: int, count: int):
        """Removes tracking info once a batch has finished."""
        with self.lock:
            for index in range(count):
                self.futures.pop((batch, index), None)

        self.log_active("batch finished")

    def log_active(self, info_msg: str = "status check"):
        """Logs how many stream tasks are still running."""
        with self.lock:
            count = sum(1 for future in self.futures.values() if not future.done())

        core_logger.debug(f"[{count}] active stream tasks after {info_msg}")

    def shutdown(self):
        """Cancels pending tasks and stops the thread pool."""
        with self.lock:
            for future in self.futures.values():
                future.cancel()
            self.futures.clear()

        self.executor.shutdown(wait=True)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.shutdown()


def run_ordered(task: Callable[[Any], Any], items: Iterable[Any],
                manager: Optional[BatchManager] = None) -> List[Any]:
    """map_ordered on the given manager, or a plain in-order loop without one."""
    if manager is None:
        return [task(item) for item in items]
    return manager.map_ordered(task, items)
