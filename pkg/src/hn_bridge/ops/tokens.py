from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass
from enum import Enum
import logging
from typing import TYPE_CHECKING, Any

from hn_bridge.netmodel import Direction, NetConfig, classify_direction
from hn_bridge.rulelang import find_occurrences

if TYPE_CHECKING:
    from hn_bridge.ops.evidence import Evidence
    from hn_bridge.simnet.hosts import HoneypotEmu

LOGGER = logging.getLogger(__name__)

MARKER_LEN = 16


class TokenError(ValueError):
    pass


class TokenKind(str, Enum):
    MAIL = "MAIL"
    SPREADSHEET = "SPREADSHEET"
    ENCRYPTED_FILE = "ENCRYPTED_FILE"


@dataclass(slots=True, frozen=True)
class Honeytoken:
    id: str
    kind: TokenKind
    marker: bytes
    planted_path: str
    host_ip: str = ""

    def __post_init__(self) -> None:
        if len(self.marker) != MARKER_LEN:
            raise TokenError(f"token {self.id}: marker must be {MARKER_LEN} bytes, got {len(self.marker)}")
        if not self.id:
            raise TokenError("token id must not be empty")

    def document(self) -> bytes:
        """Bait file contents; the marker is embedded exactly once."""
        match self.kind:
            case TokenKind.MAIL:
                return (
                    b"From: treasury@corp.example\r\nTo: board@corp.example\r\n"
                    b"Subject: wire transfer approvals\r\n\r\nApproval ref: " + self.marker + b"\r\n"
                )
            case TokenKind.SPREADSHEET:
                return b"account,holder,balance\r\nreserve," + self.marker + b",1250000\r\n"
            case TokenKind.ENCRYPTED_FILE:
                return b"-----BEGIN PGP MESSAGE-----\r\n" + self.marker + b"\r\n-----END PGP MESSAGE-----\r\n"

    def to_dict(self) -> dict[str, Any]:
        return {
            "id": self.id,
            "kind": self.kind.value,
            "marker": self.marker.hex(),
            "planted_path": self.planted_path,
            "honeypot": self.host_ip,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> Honeytoken:
        try:
            return cls(
                id=str(raw["id"]),
                kind=TokenKind(str(raw["kind"]).upper()),
                marker=bytes.fromhex(str(raw["marker"])),
                planted_path=str(raw["planted_path"]),
                host_ip=str(raw.get("honeypot", "")),
            )
        except TokenError:
            raise
        except (KeyError, ValueError) as exc:
            raise TokenError(f"malformed token definition: {exc}") from exc


def validate_tokens(tokens: Iterable[Honeytoken]) -> None:
    ids: set[str] = set()
    markers: set[bytes] = set()
    for token in tokens:
        if token.id in ids:
            raise TokenError(f"duplicate token id {token.id}")
        if token.marker in markers:
            raise TokenError(f"token {token.id}: duplicate marker {token.marker.hex()}")
        ids.add(token.id)
        markers.add(token.marker)


def plant_tokens(honeypot: HoneypotEmu, tokens: Iterable[Honeytoken]) -> HoneypotEmu:
    incoming = list(tokens)
    validate_tokens([*honeypot.tokens, *incoming])
    paths = {token.planted_path for token in honeypot.tokens}
    for token in incoming:
        if token.planted_path in paths:
            raise TokenError(f"{honeypot.name}: path {token.planted_path} already holds a token")
        paths.add(token.planted_path)
        honeypot.tokens.append(token)
        LOGGER.debug("planted %s at %s:%s", token.id, honeypot.ip, token.planted_path)
    return honeypot


class HitSource(str, Enum):
    PACKET = "PACKET"
    CAPTURE = "CAPTURE"


@dataclass(slots=True, frozen=True, order=True)
class TokenHit:
    time: int
    token_id: str
    where: HitSource
    offset: int
    src_ip: str
    dst_ip: str = ""

    def to_dict(self) -> dict[str, Any]:
        return {
            "token_id": self.token_id,
            "where": self.where.value,
            "time": self.time,
            "offset": self.offset,
            "src_ip": self.src_ip,
            "dst_ip": self.dst_ip,
        }


def scan_for_tokens(evidence: Evidence, tokens: Iterable[Honeytoken] | None = None) -> list[TokenHit]:
    """Every marker occurrence in the ingress packet store and in capture data.

    Capture-channel packets are skipped in the packet store; their content is
    reported once through the decoded capture records.
    """
    selected = list(evidence.tokens if tokens is None else tokens)
    hits: list[TokenHit] = []
    if not selected:
        return hits
    cfg: NetConfig = evidence.cfg
    for packet in evidence.packets:
        if not packet.payload or classify_direction(packet, cfg) is Direction.CAPTURE_CHANNEL:
            continue
        for token in selected:
            for offset in find_occurrences(packet.payload, token.marker):
                hits.append(
                    TokenHit(packet.timestamp, token.id, HitSource.PACKET, offset, packet.src_ip, packet.dst_ip)
                )
    for stored in evidence.captures:
        for token in selected:
            for offset in find_occurrences(stored.record.data, token.marker):
                hits.append(TokenHit(stored.received_at, token.id, HitSource.CAPTURE, offset, stored.host_ip))
    hits.sort()
    for hit in hits:
        LOGGER.info("token %s seen in %s at %d", hit.token_id, hit.where.value, hit.time)
    return hits
