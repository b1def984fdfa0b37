"""Seeded workload generation: sizes, patterns, read mix, access sequencing.

Streams are pure functions of their spec (seed included): the same spec always
yields the same requests, which is what makes whole experiments replayable.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from typing import Iterator, List, Optional, Tuple

from .blocks import BLOCK, is_aligned

SEQUENCE_MODES = ("RAR", "RAW", "WAR", "WAW", "mixed")
PATTERNS = ("uniform_random", "sequential", "trace")

# Paired-access modes interleave this many pairs per round, so partner
# accesses sit a fixed small distance apart in the stream (in-flight overlap).
PAIR_INTERLEAVE = 4


class WorkloadError(ValueError):
    pass


class TraceError(ValueError):
    pass


@dataclass(frozen=True)
class SizeDist:
    kind: str  # "fixed" | "uniform"
    low: int
    high: int = 0

    @staticmethod
    def fixed(n: int) -> "SizeDist":
        return SizeDist("fixed", n, n)

    @staticmethod
    def uniform(low: int, high: int) -> "SizeDist":
        return SizeDist("uniform", low, high)

    def max_bytes(self) -> int:
        return self.low if self.kind == "fixed" else self.high


@dataclass(frozen=True)
class WorkloadSpec:
    wss_bytes: int
    read_fraction: float = 0.0
    size_dist: SizeDist = SizeDist.fixed(4096)
    pattern: str = "uniform_random"
    target_iops: Optional[float] = None  # None = unlimited
    sequence_mode: str = "mixed"
    request_count: int = 1000
    seed: int = 0
    trace_path: Optional[str] = None

    def validate(self):
        if self.pattern not in PATTERNS:
            raise WorkloadError(f"unknown pattern {self.pattern!r}")
        if self.sequence_mode not in SEQUENCE_MODES:
            raise WorkloadError(f"unknown sequence_mode {self.sequence_mode!r}")
        if not 0.0 <= self.read_fraction <= 1.0:
            raise WorkloadError("read_fraction outside [0, 1]")
        if self.request_count <= 0:
            raise WorkloadError("request_count must be positive")
        if self.pattern != "trace":
            if self.size_dist.low <= 0 or not is_aligned(self.size_dist.low) \
                    or not is_aligned(self.size_dist.max_bytes()):
                raise WorkloadError("sizes must be positive 4 KiB multiples")
            if self.wss_bytes < self.size_dist.max_bytes():
                raise WorkloadError("wss_bytes smaller than the maximum request size")
        if not is_aligned(self.wss_bytes):
            raise WorkloadError("wss_bytes must be 4 KiB aligned")


@dataclass(frozen=True)
class IoRequest:
    op_kind: str  # "read" | "write"
    address: int
    size_bytes: int
    issuer_id: int = 0
    sequence_tag: str = "untagged"
    issue_time_us: Optional[int] = None


def _draw_size(rng: random.Random, dist: SizeDist) -> int:
    if dist.kind == "fixed":
        return dist.low
    lo, hi = dist.low // BLOCK, dist.high // BLOCK
    return rng.randint(lo, hi) * BLOCK


def _draw_address(rng: random.Random, wss: int, size: int, aligned_to: int) -> int:
    slots = (wss - size) // aligned_to
    return rng.randint(0, slots) * aligned_to


def _alignment_for(dist: SizeDist) -> int:
    # Fixed-size streams draw from a request-size grid so that repeat hits of
    # one slot are whole-request overwrites; mixed sizes stay block aligned.
    return dist.low if dist.kind == "fixed" else BLOCK


def _plain_stream(spec: WorkloadSpec) -> List[IoRequest]:
    rng = random.Random(spec.seed)
    n = spec.request_count
    n_reads = round(spec.read_fraction * n)
    ops = ["read"] * n_reads + ["write"] * (n - n_reads)
    rng.shuffle(ops)
    align = _alignment_for(spec.size_dist)
    out = []
    addr = None
    for op in ops:
        size = _draw_size(rng, spec.size_dist)
        if spec.pattern == "sequential":
            if addr is None:
                addr = _draw_address(rng, spec.wss_bytes, size, align)
            elif addr + size > spec.wss_bytes:
                addr = 0
            cur = addr
            addr = cur + size
        else:
            cur = _draw_address(rng, spec.wss_bytes, size, align)
        out.append(IoRequest(op, cur, size))
    return out


_PAIR_OPS = {
    "RAR": ("read", "read"),
    "RAW": ("write", "read"),
    "WAR": ("read", "write"),
    "WAW": ("write", "write"),
}


def _paired_stream(spec: WorkloadSpec) -> List[IoRequest]:
    """Streams of tagged access pairs to identical addresses.

    Pairs are interleaved in rounds of PAIR_INTERLEAVE, so the two members of
    a pair are separated by PAIR_INTERLEAVE requests (well inside the device
    queue window). WAW pairs come from two distinct issuers.
    """
    rng = random.Random(spec.seed)
    op_a, op_b = _PAIR_OPS[spec.sequence_mode]
    issuer_b = 1 if spec.sequence_mode == "WAW" else 0
    align = _alignment_for(spec.size_dist)
    n_pairs = spec.request_count // 2
    pairs = []
    for _ in range(n_pairs):
        size = _draw_size(rng, spec.size_dist)
        addr = _draw_address(rng, spec.wss_bytes, size, align)
        pairs.append((addr, size))
    out = []
    tag = spec.sequence_mode
    for base in range(0, n_pairs, PAIR_INTERLEAVE):
        round_pairs = pairs[base:base + PAIR_INTERLEAVE]
        for addr, size in round_pairs:
            out.append(IoRequest(op_a, addr, size, issuer_id=0, sequence_tag=tag))
        for addr, size in round_pairs:
            out.append(IoRequest(op_b, addr, size, issuer_id=issuer_b, sequence_tag=tag))
    # Odd request counts round down to whole pairs, then pad with one plain
    # access so the count contract holds exactly.
    while len(out) < spec.request_count:
        size = _draw_size(rng, spec.size_dist)
        addr = _draw_address(rng, spec.wss_bytes, size, align)
        out.append(IoRequest(op_a, addr, size, sequence_tag=tag))
    return out


def generate(spec: WorkloadSpec) -> List[IoRequest]:
    """Deterministic request stream for a workload spec."""
    spec.validate()
    if spec.pattern == "trace":
        reqs = replay_trace(spec.trace_path, wss_bytes=spec.wss_bytes)
        return reqs[: spec.request_count] if spec.request_count < len(reqs) else reqs
    if spec.sequence_mode in _PAIR_OPS:
        return _paired_stream(spec)
    return _plain_stream(spec)


def replay_trace(path, wss_bytes: Optional[int] = None) -> List[IoRequest]:
    """Load a columnar trace: `timestamp_us op address_bytes size_bytes`.

    Addresses are remapped modulo the working set when one is given.
    """
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            parts = line.split()
            if len(parts) != 4:
                raise TraceError(f"line {lineno}: expected 4 columns, got {len(parts)}")
            try:
                ts = int(parts[0])
                op = parts[1].lower()
                addr = int(parts[2])
                size = int(parts[3])
            except ValueError as exc:
                raise TraceError(f"line {lineno}: {exc}") from None
            if op in ("r", "read"):
                op = "read"
            elif op in ("w", "write"):
                op = "write"
            else:
                raise TraceError(f"line {lineno}: unknown op {parts[1]!r}")
            if size <= 0 or not is_aligned(size) or not is_aligned(addr):
                raise TraceError(f"line {lineno}: misaligned address/size")
            if wss_bytes is not None:
                if size > wss_bytes:
                    raise TraceError(f"line {lineno}: request larger than working set")
                addr = addr % (wss_bytes - size + BLOCK)
                addr -= addr % BLOCK
            out.append(IoRequest(op, addr, size, issue_time_us=ts))
    return out


def pace(stream, target_iops: Optional[float], start_us: int = 0) -> List[IoRequest]:
    """Assign deterministic issue timestamps at a fixed inter-arrival."""
    if target_iops is not None and target_iops <= 0:
        raise WorkloadError("target_iops must be positive")
    out = []
    for i, req in enumerate(stream):
        if target_iops is None:
            ts = start_us
        else:
            ts = start_us + round(i * 1_000_000 / target_iops)
        out.append(IoRequest(req.op_kind, req.address, req.size_bytes,
                             req.issuer_id, req.sequence_tag, ts))
    return out
