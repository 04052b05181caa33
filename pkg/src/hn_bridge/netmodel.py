"""Packet model shared by the gateway, the simulator and the report.

Checksum layout (fixed, IPv4 only):

- ``ip_checksum``: RFC 1071 sum over the 20-byte header
  ``45 00 | total_length | 00 00 | 00 00 | ttl | proto | 00 00 | src | dst``
  where ``total_length = 20 + l4 header length + payload length``.
- ``l4_checksum``: RFC 1071 sum over ``src | dst | 00 | proto | payload_length``
  followed by the payload.
"""

from __future__ import annotations

from collections.abc import Iterable, Iterator
from dataclasses import dataclass, field, replace
from enum import Enum, Flag
from ipaddress import IPv4Address, IPv4Network
import json
from pathlib import Path
import struct
from typing import Any

MAX_PAYLOAD = 65_495
ETHERNET_HEADER_LEN = 14
IPV4_HEADER_LEN = 20
_IP_HEADER = struct.Struct("!BBHHHBBH4s4s")
_PSEUDO_HEADER = struct.Struct("!4s4sBBH")


class PacketError(ValueError):
    pass


class Protocol(str, Enum):
    TCP = "TCP"
    UDP = "UDP"
    ICMP = "ICMP"
    OTHER = "OTHER-IP"

    @property
    def number(self) -> int:
        return _PROTOCOL_NUMBERS[self]

    @property
    def header_len(self) -> int:
        return _L4_HEADER_LEN[self]


_PROTOCOL_NUMBERS = {Protocol.ICMP: 1, Protocol.TCP: 6, Protocol.UDP: 17, Protocol.OTHER: 253}
_L4_HEADER_LEN = {Protocol.TCP: 20, Protocol.UDP: 8, Protocol.ICMP: 8, Protocol.OTHER: 0}


class TcpFlag(Flag):
    SYN = 0x02
    ACK = 0x10
    FIN = 0x01
    RST = 0x04
    PSH = 0x08


NO_FLAGS = TcpFlag(0)
_FLAG_ORDER = (TcpFlag.SYN, TcpFlag.ACK, TcpFlag.FIN, TcpFlag.RST, TcpFlag.PSH)


class Direction(str, Enum):
    INBOUND = "INBOUND"
    OUTBOUND = "OUTBOUND"
    INTERNAL = "INTERNAL"
    CAPTURE_CHANNEL = "CAPTURE_CHANNEL"
    EXTERNAL_TRANSIT = "EXTERNAL_TRANSIT"


@dataclass(slots=True, frozen=True)
class Packet:
    src_mac: int
    dst_mac: int
    src_ip: str
    dst_ip: str
    protocol: Protocol
    src_port: int = 0
    dst_port: int = 0
    tcp_flags: TcpFlag = NO_FLAGS
    ip_checksum: int = 0
    l4_checksum: int = 0
    payload: bytes = b""
    ttl: int = 64
    timestamp: int = 0

    def __post_init__(self) -> None:
        if len(self.payload) > MAX_PAYLOAD:
            raise PacketError(f"payload of {len(self.payload)} bytes exceeds {MAX_PAYLOAD}")
        if self.protocol is not Protocol.TCP and self.tcp_flags:
            raise PacketError(f"{self.protocol.value} packet cannot carry TCP flags")
        for name in ("src_port", "dst_port"):
            value = getattr(self, name)
            if not 0 <= value <= 0xFFFF:
                raise PacketError(f"{name} {value} out of range")
        if not 0 <= self.ttl <= 0xFF:
            raise PacketError(f"ttl {self.ttl} out of range")
        if self.timestamp < 0:
            raise PacketError("timestamp must be non-negative")
        for name in ("src_mac", "dst_mac"):
            if not 0 <= getattr(self, name) < 1 << 48:
                raise PacketError(f"{name} is not a 48-bit id")

    @property
    def frame_length(self) -> int:
        return ETHERNET_HEADER_LEN + IPV4_HEADER_LEN + self.protocol.header_len + len(self.payload)


@dataclass(slots=True, frozen=True, order=True)
class FlowKey:
    src_ip: str
    dst_ip: str
    protocol: Protocol
    src_port: int
    dst_port: int

    def reversed(self) -> FlowKey:
        return FlowKey(self.dst_ip, self.src_ip, self.protocol, self.dst_port, self.src_port)

    def to_dict(self) -> dict[str, Any]:
        return {
            "src_ip": self.src_ip,
            "dst_ip": self.dst_ip,
            "protocol": self.protocol.value,
            "src_port": self.src_port,
            "dst_port": self.dst_port,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> FlowKey:
        return cls(
            src_ip=str(raw["src_ip"]),
            dst_ip=str(raw["dst_ip"]),
            protocol=Protocol(raw["protocol"]),
            src_port=int(raw["src_port"]),
            dst_port=int(raw["dst_port"]),
        )


@dataclass(slots=True, frozen=True)
class NetConfig:
    honeynet_subnet: IPv4Network = field(default_factory=lambda: IPv4Network("10.1.0.0/26"))
    collector_ip: str = "192.0.2.1"
    capture_port: int = 1101
    honeypot_ips: frozenset[str] = frozenset({"10.1.0.5", "10.1.0.6"})

    def __post_init__(self) -> None:
        if IPv4Address(self.collector_ip) in self.honeynet_subnet:
            raise ValueError(f"collector {self.collector_ip} must lie outside {self.honeynet_subnet}")
        outside = sorted(ip for ip in self.honeypot_ips if IPv4Address(ip) not in self.honeynet_subnet)
        if outside:
            raise ValueError(f"honeypots outside {self.honeynet_subnet}: {', '.join(outside)}")
        if not 0 < self.capture_port <= 0xFFFF:
            raise ValueError(f"capture port {self.capture_port} out of range")

    def in_honeynet(self, ip: str) -> bool:
        return IPv4Address(ip) in self.honeynet_subnet

    def to_dict(self) -> dict[str, Any]:
        return {
            "honeynet_subnet": str(self.honeynet_subnet),
            "collector_ip": self.collector_ip,
            "capture_port": self.capture_port,
            "honeypot_ips": sorted(self.honeypot_ips, key=IPv4Address),
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> NetConfig:
        defaults = cls()
        return cls(
            honeynet_subnet=IPv4Network(str(raw.get("honeynet_subnet", defaults.honeynet_subnet))),
            collector_ip=str(raw.get("collector_ip", defaults.collector_ip)),
            capture_port=int(raw.get("capture_port", defaults.capture_port)),
            honeypot_ips=frozenset(str(ip) for ip in raw.get("honeypot_ips", defaults.honeypot_ips)),
        )


def classify_direction(packet: Packet, cfg: NetConfig) -> Direction:
    if (
        packet.protocol is Protocol.UDP
        and packet.dst_ip == cfg.collector_ip
        and packet.dst_port == cfg.capture_port
    ):
        return Direction.CAPTURE_CHANNEL
    src_inside = cfg.in_honeynet(packet.src_ip)
    dst_inside = cfg.in_honeynet(packet.dst_ip)
    if src_inside and dst_inside:
        return Direction.INTERNAL
    if src_inside:
        return Direction.OUTBOUND
    if dst_inside:
        return Direction.INBOUND
    return Direction.EXTERNAL_TRANSIT


def flow_key(packet: Packet) -> FlowKey:
    return FlowKey(packet.src_ip, packet.dst_ip, packet.protocol, packet.src_port, packet.dst_port)


def internet_checksum(data: bytes) -> int:
    """RFC 1071 one's-complement sum, complemented."""
    if len(data) % 2:
        data += b"\x00"
    total = sum(struct.unpack(f"!{len(data) // 2}H", data))
    while total >> 16:
        total = (total & 0xFFFF) + (total >> 16)
    return ~total & 0xFFFF


def ip_header_bytes(packet: Packet) -> bytes:
    total_length = IPV4_HEADER_LEN + packet.protocol.header_len + len(packet.payload)
    return _IP_HEADER.pack(
        0x45,
        0,
        total_length,
        0,
        0,
        packet.ttl,
        packet.protocol.number,
        0,
        IPv4Address(packet.src_ip).packed,
        IPv4Address(packet.dst_ip).packed,
    )


def l4_checksum_bytes(packet: Packet) -> bytes:
    pseudo = _PSEUDO_HEADER.pack(
        IPv4Address(packet.src_ip).packed,
        IPv4Address(packet.dst_ip).packed,
        0,
        packet.protocol.number,
        len(packet.payload),
    )
    return pseudo + packet.payload


def recompute_checksums(packet: Packet) -> Packet:
    return replace(
        packet,
        ip_checksum=internet_checksum(ip_header_bytes(packet)),
        l4_checksum=internet_checksum(l4_checksum_bytes(packet)),
    )


def verify_checksums(packet: Packet) -> bool:
    return (
        packet.ip_checksum == internet_checksum(ip_header_bytes(packet))
        and packet.l4_checksum == internet_checksum(l4_checksum_bytes(packet))
    )


def format_mac(value: int) -> str:
    return ":".join(f"{byte:02x}" for byte in value.to_bytes(6, "big"))


def parse_mac(text: str) -> int:
    parts = text.split(":")
    if len(parts) != 6:
        raise PacketError(f"malformed MAC address {text!r}")
    try:
        return int.from_bytes(bytes(int(part, 16) for part in parts), "big")
    except ValueError as exc:
        raise PacketError(f"malformed MAC address {text!r}") from exc


def mac_for_ip(ip: str) -> int:
    """Locally administered MAC derived from an IPv4 address (02:00:a:b:c:d)."""
    return (0x0200 << 32) | int(IPv4Address(ip))


def flags_to_names(flags: TcpFlag) -> list[str]:
    return [flag.name for flag in _FLAG_ORDER if flag in flags]


def flags_from_names(names: Iterable[str]) -> TcpFlag:
    flags = NO_FLAGS
    for name in names:
        try:
            flags |= TcpFlag[str(name)]
        except KeyError as exc:
            raise PacketError(f"unknown TCP flag {name!r}") from exc
    return flags


def packet_to_dict(packet: Packet) -> dict[str, Any]:
    return {
        "src_mac": format_mac(packet.src_mac),
        "dst_mac": format_mac(packet.dst_mac),
        "src_ip": packet.src_ip,
        "dst_ip": packet.dst_ip,
        "protocol": packet.protocol.value,
        "src_port": packet.src_port,
        "dst_port": packet.dst_port,
        "tcp_flags": flags_to_names(packet.tcp_flags),
        "ip_checksum": packet.ip_checksum,
        "l4_checksum": packet.l4_checksum,
        "payload": packet.payload.hex(),
        "ttl": packet.ttl,
        "timestamp": packet.timestamp,
    }


def packet_from_dict(raw: dict[str, Any]) -> Packet:
    try:
        for name in ("src_ip", "dst_ip"):
            IPv4Address(str(raw[name]))
        return Packet(
            src_mac=parse_mac(str(raw["src_mac"])),
            dst_mac=parse_mac(str(raw["dst_mac"])),
            src_ip=str(raw["src_ip"]),
            dst_ip=str(raw["dst_ip"]),
            protocol=Protocol(raw["protocol"]),
            src_port=int(raw["src_port"]),
            dst_port=int(raw["dst_port"]),
            tcp_flags=flags_from_names(raw.get("tcp_flags", [])),
            ip_checksum=int(raw["ip_checksum"]),
            l4_checksum=int(raw["l4_checksum"]),
            payload=bytes.fromhex(str(raw["payload"])),
            ttl=int(raw["ttl"]),
            timestamp=int(raw["timestamp"]),
        )
    except PacketError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise PacketError(f"malformed packet record: {exc}") from exc


def dump_packet_line(packet: Packet) -> str:
    return json.dumps(packet_to_dict(packet), sort_keys=True, separators=(",", ":"))


def load_trace(path: Path) -> Iterator[Packet]:
    """Yield packets from a JSON Lines trace; malformed lines raise PacketError."""
    with path.open(encoding="utf-8") as handle:
        for number, line in enumerate(handle, start=1):
            if not line.strip():
                continue
            try:
                raw = json.loads(line)
            except json.JSONDecodeError as exc:
                raise PacketError(f"{path}:{number}: invalid JSON: {exc}") from exc
            if not isinstance(raw, dict):
                raise PacketError(f"{path}:{number}: expected an object")
            try:
                yield packet_from_dict(raw)
            except PacketError as exc:
                raise PacketError(f"{path}:{number}: {exc}") from exc
