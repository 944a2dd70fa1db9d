# app/lab/parallel.py

from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Sequence, TypeVar

import numpy as np
import structlog

logger = structlog.get_logger(__name__)

T = TypeVar("T")


def map_chunks(fn: Callable[..., T], chunks: Sequence, threads: int = 1) -> List[T]:
    """
    Apply fn to every chunk and return results in chunk order

    Args:
        fn: Worker; must derive its randomness from the chunk key only
        chunks: Work descriptors (tuples are splatted into fn)
        threads: Worker threads; 1 runs inline

    Returns:
        Results in the order of `chunks`, independent of `threads`
    """
    call = (lambda c: fn(*c)) if chunks and isinstance(chunks[0], tuple) else fn
    if threads <= 1 or len(chunks) <= 1:
        return [call(c) for c in chunks]
    logger.debug("map_chunks", chunks=len(chunks), threads=threads)
    with ThreadPoolExecutor(max_workers=threads) as pool:
        return list(pool.map(call, chunks))


def pairwise_sum(values: Sequence):
    """Fixed-shape binary tree reduction; the combination order depends on len only"""
    items = list(values)
    if not items:
        return 0.0
    while len(items) > 1:
        nxt = [items[i] + items[i + 1] for i in range(0, len(items) - 1, 2)]
        if len(items) % 2:
            nxt.append(items[-1])
        items = nxt
    return items[0]

