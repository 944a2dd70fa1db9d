# app/providers/partition_provider.py
"""
Sieved prime partitions, cached in memory and on disk.

On-disk layout (ZXLB1): the magic b"ZXLB1", sieve_limit as 8-byte little
endian, then one stream of LEB128 varints: the block count, and per block its
index k, its prime count and the prime deltas (the first delta is the first
prime itself).
"""

import os
import struct
import tempfile
from functools import lru_cache
from pathlib import Path
from typing import Optional

import numpy as np
import structlog

from app.config.config import get_settings, sieve_cache_path
from app.lab.primes import PrimePartition, block_index, sieve_primes

logger = structlog.get_logger(__name__)

MAGIC = b"ZXLB1"
_HEADER = struct.Struct("<Q")


def encode_varints(values: np.ndarray) -> bytes:
    v = np.asarray(values, dtype=np.uint64)
    if v.size == 0:
        return b""
    nbytes = np.ones(v.size, dtype=np.int64)
    rest = v >> np.uint64(7)
    while np.any(rest):
        nbytes += rest > 0
        rest = rest >> np.uint64(7)
    starts = np.concatenate(([0], np.cumsum(nbytes)[:-1]))
    out = np.zeros(int(nbytes.sum()), dtype=np.uint8)
    for i in range(int(nbytes.max())):
        sel = nbytes > i
        low7 = ((v[sel] >> np.uint64(7 * i)) & np.uint64(0x7F)).astype(np.uint8)
        more = np.where(nbytes[sel] > i + 1, 0x80, 0).astype(np.uint8)
        out[starts[sel] + i] = low7 | more
    return out.tobytes()


def decode_varints(buf: bytes) -> np.ndarray:
    b = np.frombuffer(buf, dtype=np.uint8)
    if b.size == 0:
        return np.empty(0, dtype=np.uint64)
    last = (b & 0x80) == 0
    if not last[-1]:
        raise ValueError("truncated varint stream")
    ends = np.flatnonzero(last)
    starts = np.concatenate(([0], ends[:-1] + 1))
    group = np.repeat(np.arange(ends.size), ends - starts + 1)
    pos = np.arange(b.size) - starts[group]
    if pos.max() > 9:
        raise ValueError("varint longer than 64 bits")
    parts = (b & 0x7F).astype(np.uint64) << (7 * pos).astype(np.uint64)
    return np.add.reduceat(parts, starts)


def write_partition(partition: PrimePartition, path: Path) -> Path:
    """Write a partition atomically"""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fields = [np.array([len(partition.blocks)], dtype=np.uint64)]
    for k in sorted(partition.blocks):
        primes = partition.blocks[k]
        fields.append(np.array([k, primes.size], dtype=np.uint64))
        if primes.size:
            fields.append(np.diff(primes, prepend=0).astype(np.uint64))
    payload = MAGIC + _HEADER.pack(partition.sieve_limit) + encode_varints(np.concatenate(fields))

    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=".zxlb-")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
        os.replace(tmp, path)
    except Exception:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise
    logger.info("sieve_cache_written", path=str(path), bytes=len(payload))
    return path


def read_partition(path: Path) -> PrimePartition:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ValueError(f"{path} is not a ZXLB1 sieve cache")
    (limit,) = _HEADER.unpack_from(raw, len(MAGIC))
    stream = decode_varints(raw[len(MAGIC) + _HEADER.size:])
    n_blocks = int(stream[0])
    pos = 1
    pieces = []
    for _ in range(n_blocks):
        k, count = int(stream[pos]), int(stream[pos + 1])
        pos += 2
        block = np.cumsum(stream[pos: pos + count]).astype(np.int64)
        if block.size and np.any(block_index(block) != k):
            raise ValueError(f"{path}: block {k} holds primes that belong to other blocks")
        pieces.append(block)
        pos += count
    primes = np.concatenate(pieces) if pieces else np.empty(0, dtype=np.int64)
    logger.info("sieve_cache_loaded", path=str(path), limit=int(limit), primes=int(primes.size))
    return PrimePartition.from_primes(primes, int(limit))


@lru_cache(maxsize=4)
def get_partition(limit: Optional[int] = None, cache_file: Optional[str] = None) -> PrimePartition:
    """
    Shared partition for `limit`, loaded from the cache file when present

    Args:
        limit: Sieve limit (defaults to settings.sieve_limit)
        cache_file: Explicit ZXLB1 file; otherwise ZXLB_CACHE_DIR/primes-<limit>.zxlb

    Returns:
        Immutable PrimePartition
    """
    settings = get_settings()
    limit = limit or settings.sieve_limit
    path = Path(cache_file) if cache_file else sieve_cache_path(settings, limit)
    if path.is_file():
        try:
            partition = read_partition(path)
            if partition.sieve_limit >= limit:
                return partition
            logger.warning("sieve_cache_too_small", path=str(path), have=partition.sieve_limit, need=limit)
        except ValueError as e:
            logger.error(f"Failed to read sieve cache: {str(e)}", path=str(path))
            raise
    return PrimePartition.from_primes(sieve_primes(limit), limit)
