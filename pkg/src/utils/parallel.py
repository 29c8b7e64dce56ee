"""
Thread helpers for sample-level parallelism

Results are always returned in input order so reductions over them stay in a
fixed order regardless of how many workers ran.
"""
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, List, Optional, TypeVar

from ..core.config import load_runtime_settings
from .logging import get_logger

logger = get_logger(__name__)

T = TypeVar("T")
R = TypeVar("R")


def worker_count(requested: Optional[int] = None) -> int:
    """Number of workers, capped by MURTREE_THREADS"""
    cap = load_runtime_settings().threads
    if requested is None:
        return cap
    return max(1, min(requested, cap))


def ordered_map(fn: Callable[[T], R], items: Iterable[T], max_workers: Optional[int] = None) -> List[R]:
    """
    Apply fn to every item, possibly on a thread pool

    Args:
        fn: function to apply; must not depend on shared mutable state
        items: inputs
        max_workers: requested worker count (capped by MURTREE_THREADS)

    Returns:
        list of results in input order
    """
    items = list(items)
    workers = min(worker_count(max_workers), max(1, len(items)))
    if workers == 1:
        return [fn(item) for item in items]

    logger.debug(f"Running {len(items)} tasks on {workers} threads")
    with ThreadPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))
