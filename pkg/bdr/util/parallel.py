from typing import Callable, Iterable, TypeVar

from joblib import Parallel, delayed

T = TypeVar("T")
R = TypeVar("R")


def parallel_map(fn: Callable[[T], R], items: Iterable[T], threads: int = 1) -> list[R]:
    """
    Map `fn` over `items`, returning results in item order.

    With threads == 1 this is a plain loop (no joblib overhead, easier
    tracebacks). Otherwise a joblib thread pool capped at `threads` is used;
    callers are responsible for giving each item its own random stream.
    """
    if threads < 1:
        raise ValueError(f"threads must be >= 1, got {threads}")
    items = list(items)
    if threads == 1 or len(items) < 2:
        return [fn(item) for item in items]

    # joblib preserves input order in its output list
    return Parallel(n_jobs=threads, prefer="threads")(delayed(fn)(i) for i in items)
