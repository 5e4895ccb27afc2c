"""Helpers to fan independent work out over threads.

numpy releases the GIL inside its kernels, so Monte-Carlo chunks and
independent training runs overlap well on plain threads.
"""

import asyncio
from typing import Callable, Iterable, TypeVar

import nest_asyncio

from .config import get_thread_count

T = TypeVar("T")
R = TypeVar("R")


def run_async(coro):
    """Run an async coroutine from synchronous code and return its result.

    Works whether or not an event loop is already running (for example under
    pytest-asyncio), because ``nest_asyncio`` makes the loop re-entrant.
    """
    nest_asyncio.apply()

    try:
        loop = asyncio.get_event_loop()
    except RuntimeError:
        loop = asyncio.new_event_loop()
        asyncio.set_event_loop(loop)

    future = asyncio.ensure_future(coro, loop=loop)
    loop.run_until_complete(future)
    return future.result()


async def gather_in_threads(
    fn: Callable[[T], R], items: Iterable[T], workers: int | None = None
) -> list[R]:
    """Apply ``fn`` to every item on worker threads; results keep input order."""
    limit = asyncio.Semaphore(workers or get_thread_count())

    async def _one(item):
        async with limit:
            return await asyncio.to_thread(fn, item)

    return list(await asyncio.gather(*(_one(item) for item in items)))


def map_in_threads(
    fn: Callable[[T], R], items: Iterable[T], workers: int | None = None
) -> list[R]:
    """Synchronous front end for :func:`gather_in_threads`."""
    items = list(items)
    workers = workers or get_thread_count()
    if workers == 1 or len(items) <= 1:
        return [fn(item) for item in items]
    return run_async(gather_in_threads(fn, items, workers))
