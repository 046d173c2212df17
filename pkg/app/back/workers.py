"""
Worker pool module for per-image parallelism.

This module manages a process-wide thread pool used to process images
independently (NMS, matching, target generation, synthetic generation).
Results are always merged back in input order, so outputs do not depend on
the number of workers.
"""

from concurrent.futures import ThreadPoolExecutor
from typing import Any, Callable, Iterable, List, Optional, TypeVar
import logging
import threading

logger = logging.getLogger(__name__)

T = TypeVar("T")
R = TypeVar("R")

# Global worker pool
_worker_pool: Optional[ThreadPoolExecutor] = None
_pool_size: int = 0
_pool_lock = threading.Lock()


def initialize_worker_pool(workers: int = 1) -> None:
    """
    Initializes the global worker pool.

    A pool of one worker is not created at all: work then runs inline on the
    calling thread.

    Args:
        workers (int): Number of worker threads. Default is 1.

    Raises:
        ValueError: If workers is smaller than 1.

    Side Effects:
        Replaces any pool created by a previous call.
    """
    global _worker_pool, _pool_size

    if workers < 1:
        raise ValueError(f"workers must be >= 1 (got {workers})")

    with _pool_lock:
        if _worker_pool is not None:
            _worker_pool.shutdown(wait=True)
            _worker_pool = None
        _pool_size = workers
        if workers > 1:
            _worker_pool = ThreadPoolExecutor(
                max_workers=workers, thread_name_prefix="crowdattr-worker"
            )
    logger.info(f"Worker pool initialized: workers={workers}")


def close_worker_pool() -> None:
    """
    Shuts down the global worker pool.

    Side Effects:
        Waits for queued work, then removes the global pool.
    """
    global _worker_pool, _pool_size

    with _pool_lock:
        if _worker_pool is not None:
            logger.info("Closing worker pool...")
            _worker_pool.shutdown(wait=True)
            _worker_pool = None
        _pool_size = 0


def get_pool_status() -> dict:
    """
    Reports the state of the worker pool.

    Returns:
        dict: ``workers`` (configured size) and ``threaded`` (whether a pool exists).
    """
    return {
        "workers": max(_pool_size, 1),
        "threaded": _worker_pool is not None,
    }


def map_ordered(fn: Callable[[T], R], items: Iterable[T]) -> List[R]:
    """
    Applies ``fn`` to every item, using the pool when one is available.

    Args:
        fn (Callable): Pure per-item function.
        items (Iterable): Work items.

    Returns:
        list: Results in the same order as ``items``.

    Raises:
        Exception: The first exception raised by ``fn``, in input order.
    """
    items = list(items)
    pool = _worker_pool
    if pool is None or len(items) < 2:
        return [fn(item) for item in items]
    return list(pool.map(fn, items))


def starmap_ordered(fn: Callable[..., R], arg_tuples: Iterable[tuple]) -> List[R]:
    """Tuple-unpacking variant of :func:`map_ordered`."""

    def _call(args: tuple) -> Any:
        return fn(*args)

    return map_ordered(_call, arg_tuples)
