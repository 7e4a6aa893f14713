"""Order-preserving parallel map.

Work items fan out to a thread pool but results always come back in input
order and reductions happen on the ordered list, so the thread count can
never change an output byte.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Iterable, Sequence, TypeVar

T = TypeVar("T")
R = TypeVar("R")


def ordered_map(fn: Callable[[T], R], items: Sequence[T], threads: int = 1) -> list[R]:
    if threads <= 1 or len(items) <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(fn, items))


def resolve_threads(value: int | None, env: dict | None = None) -> int:
    """--threads wins; otherwise TOKENLENS_THREADS; otherwise 1."""
    import os

    if value is not None:
        if value < 1:
            raise ValueError("threads must be >= 1")
        return value
    environ = env if env is not None else os.environ
    raw = environ.get("TOKENLENS_THREADS")
    if raw is None or raw == "":
        return 1
    try:
        n = int(raw)
    except ValueError:
        raise ValueError(f"TOKENLENS_THREADS must be an integer, got {raw!r}") from None
    if n < 1:
        raise ValueError("TOKENLENS_THREADS must be >= 1")
    return n
