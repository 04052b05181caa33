"""Covert activity channel between honeypot sensors and the collector.

Wire layout of one record (all integers big-endian)::

    offset  size  field
         0     4  magic      0xD0D0D0D0
         4     2  version    1
         6     2  rec_type   0 = input (keystrokes), 1 = output
         8     4  counter    per-host, strictly increasing
        12     4  time_sec
        16     4  time_usec
        20     4  pid
        24     4  uid
        28     4  fd
        32    12  command    NUL padded, longer names truncated
        44     4  data_len
        48     n  data
"""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import IntEnum
import logging
import struct
from typing import TYPE_CHECKING, Any

from hn_bridge.gateway import EventKind, GatewayEvent
from hn_bridge.netmodel import (
    MAX_PAYLOAD,
    Direction,
    Packet,
    Protocol,
    flow_key,
    mac_for_ip,
    recompute_checksums,
)

if TYPE_CHECKING:
    from hn_bridge.stores import EvidenceStores

LOGGER = logging.getLogger(__name__)

MAGIC = 0xD0D0D0D0
VERSION = 1
COMMAND_LEN = 12
SENSOR_PORT = 1101
_HEADER = struct.Struct("!IHHIIIIII12sI")
HEADER_LEN = _HEADER.size
MAX_DATA = MAX_PAYLOAD - HEADER_LEN
_U32 = 0xFFFF_FFFF


class CaptureError(ValueError):
    pass


class CaptureDecodeError(ValueError):
    def __init__(self, reason: str) -> None:
        super().__init__(reason)
        self.reason = reason


class RecordType(IntEnum):
    INPUT = 0
    OUTPUT = 1


@dataclass(slots=True, frozen=True, kw_only=True)
class CaptureRecord:
    rec_type: RecordType
    counter: int
    time_sec: int
    time_usec: int
    pid: int
    uid: int
    fd: int
    command: bytes
    data: bytes = b""
    magic: int = MAGIC
    version: int = VERSION

    @property
    def data_len(self) -> int:
        return len(self.data)

    @property
    def command_name(self) -> str:
        return self.command.rstrip(b"\x00").decode("utf-8", errors="replace")

    def to_dict(self) -> dict[str, Any]:
        return {
            "magic": self.magic,
            "version": self.version,
            "rec_type": int(self.rec_type),
            "counter": self.counter,
            "time_sec": self.time_sec,
            "time_usec": self.time_usec,
            "pid": self.pid,
            "uid": self.uid,
            "fd": self.fd,
            "command": self.command.hex(),
            "data_len": self.data_len,
            "data": self.data.hex(),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> CaptureRecord:
        data = bytes.fromhex(str(raw.get("data", "")))
        if "data_len" in raw and int(raw["data_len"]) != len(data):
            raise CaptureError("data_len does not match data")
        return cls(
            magic=int(raw.get("magic", MAGIC)),
            version=int(raw.get("version", VERSION)),
            rec_type=RecordType(int(raw["rec_type"])),
            counter=int(raw["counter"]),
            time_sec=int(raw["time_sec"]),
            time_usec=int(raw["time_usec"]),
            pid=int(raw["pid"]),
            uid=int(raw["uid"]),
            fd=int(raw["fd"]),
            command=bytes.fromhex(str(raw["command"])),
            data=data,
        )


def pad_command(command: str | bytes) -> bytes:
    raw = command.encode("utf-8") if isinstance(command, str) else command
    if len(raw) > COMMAND_LEN:
        LOGGER.debug("command %r truncated to %d bytes", raw, COMMAND_LEN)
        raw = raw[:COMMAND_LEN]
    return raw.ljust(COMMAND_LEN, b"\x00")


def encode_record(record: CaptureRecord, data_len: int | None = None) -> bytes:
    """Serialize ``record``; ``data_len`` is checked against the data when given."""
    if data_len is not None and data_len != len(record.data):
        raise CaptureError(f"data_len {data_len} does not match {len(record.data)} data bytes")
    if len(record.command) != COMMAND_LEN:
        raise CaptureError(f"command must be exactly {COMMAND_LEN} bytes")
    for name in ("counter", "time_sec", "time_usec", "pid", "uid", "fd"):
        if not 0 <= getattr(record, name) <= _U32:
            raise CaptureError(f"{name} does not fit in 32 bits")
    header = _HEADER.pack(
        record.magic,
        record.version,
        int(record.rec_type),
        record.counter,
        record.time_sec,
        record.time_usec,
        record.pid,
        record.uid,
        record.fd,
        record.command,
        len(record.data),
    )
    return header + record.data


def decode_record(buffer: bytes) -> CaptureRecord:
    if len(buffer) < HEADER_LEN:
        raise CaptureDecodeError("short buffer")
    (magic, version, rec_type, counter, time_sec, time_usec, pid, uid, fd, command, data_len) = _HEADER.unpack_from(
        buffer
    )
    if magic != MAGIC:
        raise CaptureDecodeError("bad magic")
    if version != VERSION:
        raise CaptureDecodeError("bad version")
    if HEADER_LEN + data_len != len(buffer):
        raise CaptureDecodeError("length mismatch")
    try:
        kind = RecordType(rec_type)
    except ValueError:
        raise CaptureDecodeError("bad record type") from None
    return CaptureRecord(
        rec_type=kind,
        counter=counter,
        time_sec=time_sec,
        time_usec=time_usec,
        pid=pid,
        uid=uid,
        fd=fd,
        command=command,
        data=bytes(buffer[HEADER_LEN:]),
    )


@dataclass(slots=True)
class CaptureSensor:
    """Honeypot-side state of the capture client."""

    host_ip: str
    collector_ip: str
    capture_port: int
    counter: int = 0


def emit(
    sensor: CaptureSensor,
    rec_type: RecordType,
    pid: int,
    uid: int,
    fd: int,
    command: str | bytes,
    data: bytes,
    clock: int,
) -> Packet:
    if len(data) > MAX_DATA:
        raise CaptureError(f"capture data of {len(data)} bytes exceeds {MAX_DATA}")
    sensor.counter += 1
    record = CaptureRecord(
        rec_type=RecordType(rec_type),
        counter=sensor.counter,
        time_sec=clock // 1_000_000,
        time_usec=clock % 1_000_000,
        pid=pid,
        uid=uid,
        fd=fd,
        command=pad_command(command),
        data=data,
    )
    packet = Packet(
        src_mac=mac_for_ip(sensor.host_ip),
        dst_mac=mac_for_ip(sensor.collector_ip),
        src_ip=sensor.host_ip,
        dst_ip=sensor.collector_ip,
        protocol=Protocol.UDP,
        src_port=SENSOR_PORT,
        dst_port=sensor.capture_port,
        payload=encode_record(record),
        timestamp=clock,
    )
    return recompute_checksums(packet)


@dataclass(slots=True, frozen=True)
class StoredRecord:
    host_ip: str
    received_at: int
    record: CaptureRecord
    flags: tuple[str, ...] = ()

    def to_dict(self) -> dict[str, Any]:
        return {"host_ip": self.host_ip, "received_at": self.received_at, "flags": list(self.flags)} | (
            self.record.to_dict()
        )

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> StoredRecord:
        return cls(
            host_ip=str(raw["host_ip"]),
            received_at=int(raw["received_at"]),
            record=CaptureRecord.from_dict(raw),
            flags=tuple(str(flag) for flag in raw.get("flags", [])),
        )


@dataclass(slots=True, frozen=True)
class RawCapture:
    host_ip: str
    received_at: int
    reason: str
    payload: bytes

    def to_dict(self) -> dict[str, Any]:
        return {
            "host_ip": self.host_ip,
            "received_at": self.received_at,
            "reason": self.reason,
            "payload": self.payload.hex(),
        }


@dataclass(slots=True)
class CaptureStore:
    records: list[StoredRecord] = field(default_factory=list)
    raw: list[RawCapture] = field(default_factory=list)
    last_counter: dict[str, int] = field(default_factory=dict)
    sink: EvidenceStores | None = None

    def for_host(self, host_ip: str) -> list[StoredRecord]:
        return [stored for stored in self.records if stored.host_ip == host_ip]


def collector_ingest(packet: Packet, store: CaptureStore) -> list[GatewayEvent]:
    """Persist one capture packet. Never raises on bad payloads."""
    try:
        record = decode_record(packet.payload)
    except CaptureDecodeError as exc:
        LOGGER.warning("undecodable capture payload from %s: %s", packet.src_ip, exc.reason)
        raw = RawCapture(packet.src_ip, packet.timestamp, exc.reason, packet.payload)
        store.raw.append(raw)
        event = GatewayEvent(
            time=packet.timestamp,
            kind=EventKind.ALERT,
            flow=flow_key(packet),
            direction=Direction.CAPTURE_CHANNEL,
            byte_count=packet.frame_length,
            reason=f"capture-undecodable: {exc.reason}",
        )
        if store.sink is not None:
            store.sink.capture_raw(raw)
            store.sink.event(event)
        return [event]

    flags: tuple[str, ...] = ()
    previous = store.last_counter.get(packet.src_ip)
    if previous is not None and record.counter <= previous:
        LOGGER.warning("capture counter %d from %s is not above %d", record.counter, packet.src_ip, previous)
        flags = ("duplicate-counter",)
    else:
        store.last_counter[packet.src_ip] = record.counter
    stored = StoredRecord(packet.src_ip, packet.timestamp, record, flags)
    store.records.append(stored)
    if store.sink is not None:
        store.sink.capture(stored)
    return []


@dataclass(slots=True, frozen=True)
class Session:
    host_ip: str
    records: tuple[CaptureRecord, ...] = ()

    @property
    def transcript(self) -> bytes:
        return b"".join(record.data for record in self.records if record.rec_type is RecordType.INPUT)


def reassemble_session(store: CaptureStore | Iterable[StoredRecord], host_ip: str) -> Session:
    stored = store.for_host(host_ip) if isinstance(store, CaptureStore) else [s for s in store if s.host_ip == host_ip]
    by_counter: dict[int, CaptureRecord] = {}
    for item in stored:
        by_counter.setdefault(item.record.counter, item.record)
    return Session(host_ip, tuple(by_counter[counter] for counter in sorted(by_counter)))
