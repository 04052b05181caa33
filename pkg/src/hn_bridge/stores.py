from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
import json
import logging
from pathlib import Path
from typing import IO, Any, Protocol

from hn_bridge.netmodel import Packet, dump_packet_line

LOGGER = logging.getLogger(__name__)


class StoreName(str, Enum):
    PACKETS = "packets.jsonl"
    FORWARDED = "forwarded.jsonl"
    EVENTS = "events.jsonl"
    CAPTURE = "capture.jsonl"
    CAPTURE_RAW = "capture_raw.jsonl"
    FIREWALL = "firewall.log"
    ALERTS = "alerts.jsonl"
    EVENTLOG = "eventlog.jsonl"


class Recordable(Protocol):
    def to_dict(self) -> dict[str, Any]: ...


class StoreBackend(Protocol):
    def append_line(self, name: StoreName, line: str) -> None: ...

    def lines(self, name: StoreName) -> list[str]: ...

    def close(self) -> None: ...


class MemoryBackend:
    def __init__(self) -> None:
        self._lines: dict[StoreName, list[str]] = {name: [] for name in StoreName}

    def append_line(self, name: StoreName, line: str) -> None:
        self._lines[name].append(line)

    def lines(self, name: StoreName) -> list[str]:
        return list(self._lines[name])

    def close(self) -> None:
        return None


class DirectoryBackend:
    """One file per store; opening truncates, writes only ever append."""

    def __init__(self, directory: Path) -> None:
        self._directory = directory
        directory.mkdir(parents=True, exist_ok=True)
        self._handles: dict[StoreName, IO[str]] = {
            name: (directory / name.value).open("w", encoding="utf-8", newline="\n") for name in StoreName
        }

    @property
    def directory(self) -> Path:
        return self._directory

    def append_line(self, name: StoreName, line: str) -> None:
        self._handles[name].write(line + "\n")

    def lines(self, name: StoreName) -> list[str]:
        handle = self._handles.get(name)
        if handle is not None and not handle.closed:
            handle.flush()
        path = self._directory / name.value
        if not path.exists():
            return []
        return path.read_text(encoding="utf-8").splitlines()

    def close(self) -> None:
        for handle in self._handles.values():
            if not handle.closed:
                handle.close()


class EvidenceStores:
    def __init__(self, backend: StoreBackend | None = None) -> None:
        self._backend = backend or MemoryBackend()

    @classmethod
    def in_memory(cls) -> EvidenceStores:
        return cls(MemoryBackend())

    @classmethod
    def open_directory(cls, directory: Path) -> EvidenceStores:
        return cls(DirectoryBackend(directory))

    def tap(self, packet: Packet) -> None:
        self._backend.append_line(StoreName.PACKETS, dump_packet_line(packet))

    def forward(self, packet: Packet) -> None:
        self._backend.append_line(StoreName.FORWARDED, dump_packet_line(packet))

    def event(self, event: Recordable) -> None:
        self._append(StoreName.EVENTS, event.to_dict())

    def capture(self, record: Recordable) -> None:
        self._append(StoreName.CAPTURE, record.to_dict())

    def capture_raw(self, record: Recordable) -> None:
        self._append(StoreName.CAPTURE_RAW, record.to_dict())

    def firewall(self, line: str) -> None:
        self._backend.append_line(StoreName.FIREWALL, line)

    def alert(self, alert: Recordable) -> None:
        self._append(StoreName.ALERTS, alert.to_dict())

    def log(self, entry: Recordable) -> None:
        self._append(StoreName.EVENTLOG, entry.to_dict())

    def lines(self, name: StoreName) -> list[str]:
        return self._backend.lines(name)

    def close(self) -> None:
        self._backend.close()

    def __enter__(self) -> EvidenceStores:
        return self

    def __exit__(self, *exc_info: object) -> None:
        self.close()

    def _append(self, name: StoreName, record: dict[str, Any]) -> None:
        self._backend.append_line(name, dump_json_line(record))


def dump_json_line(record: dict[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, separators=(",", ":"))


@dataclass(slots=True)
class JsonlReadResult:
    records: list[dict[str, Any]] = field(default_factory=list)
    corrupt: int = 0


def parse_jsonl(lines: Iterable[str], source: str) -> JsonlReadResult:
    result = JsonlReadResult()
    for number, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            record = json.loads(line)
        except json.JSONDecodeError as exc:
            LOGGER.warning("%s:%d: corrupt line skipped (%s)", source, number, exc.msg)
            result.corrupt += 1
            continue
        if not isinstance(record, dict):
            LOGGER.warning("%s:%d: corrupt line skipped (not an object)", source, number)
            result.corrupt += 1
            continue
        result.records.append(record)
    return result


def read_store_lines(directory: Path, name: StoreName) -> list[str]:
    path = directory / name.value
    if not path.exists():
        return []
    return path.read_text(encoding="utf-8").splitlines()
