"""Block-granular content bookkeeping shared by the simulated stores.

Every store in the simulator (NAND media, backing disk, the analyzer's
expected-content shadow) holds data at 4 KiB granularity. Block payloads are
deterministic pseudo-random patterns keyed by a small content id, so stores
keep ids instead of megabytes of bytes; real bytes are materialized only when
something has to be checksummed or written to disk.
"""

from __future__ import annotations

import hashlib
from functools import lru_cache

BLOCK = 4096

# Content ids: ZERO for never-programmed media, or (block_index, version) for
# the version-th payload written at a logical block. Version 0 is the backing
# store's initial image.
ZERO = (-1, 0)


def is_aligned(value: int) -> bool:
    return value % BLOCK == 0


def block_of(addr: int) -> int:
    return addr // BLOCK


def block_span(addr: int, size: int) -> range:
    """Indices of the blocks covering [addr, addr+size)."""
    return range(addr // BLOCK, (addr + size + BLOCK - 1) // BLOCK)


@lru_cache(maxsize=None)
def _pattern_seed(block: int, version: int) -> bytes:
    return hashlib.blake2b(b"%d:%d" % (block, version), digest_size=16).digest()


def content_bytes(cid) -> bytes:
    """Materialize the 4 KiB payload for a content id."""
    if cid == ZERO:
        return b"\x00" * BLOCK
    block, version = cid
    return _pattern_seed(block, version) * (BLOCK // 16)


def range_bytes(cids) -> bytes:
    return b"".join(content_bytes(c) for c in cids)


class ChecksumMemo:
    """Per-run cache of block/range checksums keyed by content ids.

    The same block contents get re-checksummed many times per experiment
    (initial snapshot, data checksum, verification read); hashing each content
    id once keeps campaign runtime sane.
    """

    def __init__(self, checksum_fn):
        self._fn = checksum_fn
        self._single: dict = {}
        self._multi: dict = {}

    def block(self, cid) -> int:
        v = self._single.get(cid)
        if v is None:
            v = self._fn(content_bytes(cid))
            self._single[cid] = v
        return v

    def span(self, cids: tuple) -> int:
        if len(cids) == 1:
            return self.block(cids[0])
        v = self._multi.get(cids)
        if v is None:
            v = self._fn(range_bytes(cids))
            self._multi[cids] = v
        return v
