"""Ordered fan-out of chunk work over a process pool.

Results are returned in submission order, so reductions over chunks are
identical for any worker count (including the serial path).
"""

from __future__ import annotations

import concurrent.futures
import multiprocessing


def map_ordered(fn, items, workers=None):
    items = list(items)
    if workers is None or workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    ctx = multiprocessing.get_context("fork")
    with concurrent.futures.ProcessPoolExecutor(
        max_workers=workers, mp_context=ctx
    ) as ex:
        return list(ex.map(fn, items))
