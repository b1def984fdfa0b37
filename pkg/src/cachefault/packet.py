"""Checksummed data packets: the unit of write verification.

A packet records everything needed to decide, after the fact, whether an I/O
request's data actually survived: whole-range and per-sub-request checksums of
the payload, of the destination range before issue, and of the destination
range after completion. Packets serialize one-per-line into a JSON database
whose field names follow the on-disk record layout (Size, Address, Queue_Time,
Initial_Checksum, Data_Checksum, Final_Checksum, Complete_Time, and per sub:
ID, Sub_Req_Size, Sub_Address, Sub_Checksum, Sub_Final_Checksum, Sub_Data).
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Optional

from .blocks import BLOCK, is_aligned

DEFAULT_SUB_BYTES = 64 * 1024

# checksum() of b"". Frozen so accidental algorithm changes fail loudly.
EMPTY_CHECKSUM = 0xE4A6A0577479B2B4


def checksum(data: bytes) -> int:
    """64-bit digest of a byte sequence (BLAKE2b, 8-byte digest, big-endian).

    Deterministic across runs and platforms; defined for empty input.
    """
    return int.from_bytes(hashlib.blake2b(data, digest_size=8).digest(), "big")


class AlignmentError(ValueError):
    pass


class PacketStateError(RuntimeError):
    pass


class RecordError(ValueError):
    """Malformed database line. Carries the byte offset of the fault."""

    def __init__(self, message: str, offset: int = 0):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass(frozen=True)
class SubRequest:
    id: int
    size_bytes: int
    address: int
    data_checksum: int
    final_checksum: Optional[int] = None
    payload: Optional[bytes] = None  # None for reads (checksums only)

    def __post_init__(self):
        if self.payload is not None:
            if len(self.payload) != self.size_bytes:
                raise ValueError("sub-request payload length != size_bytes")
            if checksum(self.payload) != self.data_checksum:
                raise ValueError("sub-request checksum mismatch")


@dataclass(frozen=True)
class DataPacket:
    size_bytes: int
    address: int
    queue_time: int
    initial_checksum: int
    data_checksum: int
    sub_requests: tuple
    op_kind: str = "write"  # "read" | "write"
    sequence_tag: str = "untagged"  # RAR | RAW | WAR | WAW | untagged
    final_checksum: Optional[int] = None
    complete_time: Optional[int] = None
    packet_id: int = 0
    issuer_id: int = 0

    def __post_init__(self):
        if sum(s.size_bytes for s in self.sub_requests) != self.size_bytes:
            raise ValueError("sub-request sizes do not sum to packet size")
        expect = self.address
        for i, sub in enumerate(self.sub_requests):
            if sub.id != i:
                raise ValueError("sub-request ids must be 0..n-1")
            if sub.address != expect:
                raise ValueError("sub-requests must partition the range contiguously")
            expect += sub.size_bytes
        if self.complete_time is not None and self.complete_time < self.queue_time:
            raise ValueError("complete_time precedes queue_time")

    @property
    def num_sub_requests(self) -> int:
        return len(self.sub_requests)


def split_sizes(total: int, max_sub_bytes: int):
    """Sub-request sizes: max_sub_bytes each plus a smaller tail."""
    full, tail = divmod(total, max_sub_bytes)
    return [max_sub_bytes] * full + ([tail] if tail else [])


def build_packet(op_kind, address, payload, max_sub_bytes=DEFAULT_SUB_BYTES,
                 clock=0, initial_snapshot=b"", *, sequence_tag="untagged",
                 packet_id=0, issuer_id=0, keep_payload=True) -> DataPacket:
    """Assemble a packet from a raw request.

    `payload` carries the bytes being written, or for reads the expected
    destination contents (used for checksums only; reads never store bytes).
    `initial_snapshot` is the destination range as observed before issue.
    """
    if op_kind not in ("read", "write"):
        raise ValueError(f"unknown op_kind {op_kind!r}")
    if not payload:
        raise ValueError("payload (or expected contents) must be non-empty")
    if max_sub_bytes <= 0:
        raise ValueError("max_sub_bytes must be positive")
    if not is_aligned(address) or not is_aligned(len(payload)):
        raise AlignmentError(
            f"address {address} / size {len(payload)} not {BLOCK}-byte aligned")
    if len(initial_snapshot) != len(payload):
        raise ValueError("initial snapshot must cover the destination range")

    store = keep_payload and op_kind == "write"
    subs = []
    offset = 0
    for i, size in enumerate(split_sizes(len(payload), max_sub_bytes)):
        chunk = payload[offset:offset + size]
        subs.append(SubRequest(
            id=i, size_bytes=size, address=address + offset,
            data_checksum=checksum(chunk),
            payload=chunk if store else None))
        offset += size
    return DataPacket(
        size_bytes=len(payload), address=address, queue_time=clock,
        initial_checksum=checksum(initial_snapshot),
        data_checksum=checksum(payload), sub_requests=tuple(subs),
        op_kind=op_kind, sequence_tag=sequence_tag,
        packet_id=packet_id, issuer_id=issuer_id)


def finalize_packet(packet: DataPacket, final_snapshot: bytes,
                    completion_clock: int) -> DataPacket:
    """Record the observed destination contents after completion."""
    if packet.final_checksum is not None:
        raise PacketStateError("packet already finalized")
    if len(final_snapshot) != packet.size_bytes:
        raise ValueError("final snapshot must cover the destination range")
    subs = []
    for sub in packet.sub_requests:
        off = sub.address - packet.address
        chunk = final_snapshot[off:off + sub.size_bytes]
        subs.append(replace(sub, final_checksum=checksum(chunk)))
    return replace(packet, sub_requests=tuple(subs),
                   final_checksum=checksum(final_snapshot),
                   complete_time=completion_clock)


def _hex(value: Optional[int]) -> Optional[str]:
    return None if value is None else f"{value:016x}"


def _unhex(value, offset):
    if value is None:
        return None
    try:
        return int(value, 16)
    except (TypeError, ValueError):
        raise RecordError(f"bad checksum field {value!r}", offset)


def encode_record(packet: DataPacket) -> str:
    """One packet as a single newline-free JSON line."""
    rec = {
        "Size": packet.size_bytes,
        "Address": packet.address,
        "Queue_Time": packet.queue_time,
        "Initial_Checksum": _hex(packet.initial_checksum),
        "Data_Checksum": _hex(packet.data_checksum),
        "Final_Checksum": _hex(packet.final_checksum),
        "Complete_Time": packet.complete_time,
        "Op_Kind": packet.op_kind,
        "Sequence_Tag": packet.sequence_tag,
        "Packet_Id": packet.packet_id,
        "Issuer_Id": packet.issuer_id,
        "Sub_Requests": [
            {
                "ID": s.id,
                "Sub_Req_Size": s.size_bytes,
                "Sub_Address": s.address,
                "Sub_Checksum": _hex(s.data_checksum),
                "Sub_Final_Checksum": _hex(s.final_checksum),
                "Sub_Data": s.payload.hex() if s.payload is not None else None,
            }
            for s in packet.sub_requests
        ],
    }
    return json.dumps(rec, separators=(",", ":"))


def decode_record(line) -> DataPacket:
    """Parse one database line back into a packet (round-trip identity)."""
    if isinstance(line, bytes):
        line = line.decode("utf-8", errors="replace")
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise RecordError(f"unparseable record: {exc.msg}", exc.pos) from None
    if not isinstance(rec, dict):
        raise RecordError("record is not an object", 0)
    try:
        subs = []
        for raw in rec["Sub_Requests"]:
            data = raw.get("Sub_Data")
            subs.append(SubRequest(
                id=raw["ID"], size_bytes=raw["Sub_Req_Size"],
                address=raw["Sub_Address"],
                data_checksum=_unhex(raw["Sub_Checksum"], 0),
                final_checksum=_unhex(raw.get("Sub_Final_Checksum"), 0),
                payload=bytes.fromhex(data) if data is not None else None))
        return DataPacket(
            size_bytes=rec["Size"], address=rec["Address"],
            queue_time=rec["Queue_Time"],
            initial_checksum=_unhex(rec["Initial_Checksum"], 0),
            data_checksum=_unhex(rec["Data_Checksum"], 0),
            final_checksum=_unhex(rec.get("Final_Checksum"), 0),
            complete_time=rec.get("Complete_Time"),
            op_kind=rec.get("Op_Kind", "write"),
            sequence_tag=rec.get("Sequence_Tag", "untagged"),
            packet_id=rec.get("Packet_Id", 0),
            issuer_id=rec.get("Issuer_Id", 0),
            sub_requests=tuple(subs))
    except RecordError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise RecordError(f"invalid record: {exc}", 0) from None


def write_database(path, packets):
    with open(path, "w", encoding="utf-8") as fh:
        for p in packets:
            fh.write(encode_record(p))
            fh.write("\n")


def read_database(path):
    out = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            line = line.strip()
            if line:
                out.append(decode_record(line))
    return out
