"""
Order-preserving fan-out over worker processes.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def chunked(items: Sequence[T], n_chunks: int) -> list[list[T]]:
    """Split into at most `n_chunks` contiguous, nearly equal, non-empty chunks."""
    n_chunks = max(1, min(n_chunks, len(items)))
    size, extra = divmod(len(items), n_chunks)
    chunks, start = [], 0
    for index in range(n_chunks):
        stop = start + size + (1 if index < extra else 0)
        if stop > start:
            chunks.append(list(items[start:stop]))
        start = stop
    return chunks


def parallel_map(fn: Callable[[T], R], tasks: Iterable[T], workers: int = 1) -> list[R]:
    """
    Apply `fn` to every task, in order.

    With `workers` > 1 the tasks run in a process pool; results keep task order,
    so output does not depend on the parallelism degree.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks))
