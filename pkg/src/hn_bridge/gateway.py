"""The honeywall: a transparent inline bridge with data control and data capture.

``process`` runs one packet through a fixed pipeline:

1. tap: the packet is appended to the ingress store, whatever happens next
2. direction classification
3. capture-channel packets are diverted to the collector (never forwarded,
   never charged against a quota)
4. outbound connection initiations are checked against the quota; a denied
   initiation is dropped silently
5. rules are matched in order; the first matching rule with ``replace``
   rewrites the payload, every other match raises an ALERT event
6. the (possibly rewritten) packet is forwarded; nothing else about it changes
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field, replace
from enum import Enum
import logging
from typing import TYPE_CHECKING, Any, NamedTuple

from hn_bridge.netmodel import (
    Direction,
    FlowKey,
    NetConfig,
    Packet,
    Protocol,
    TcpFlag,
    classify_direction,
    flow_key,
    recompute_checksums,
    verify_checksums,
)
from hn_bridge.rulelang import RuleSet, match_rule, rewrite_payload

if TYPE_CHECKING:
    from hn_bridge.stores import EvidenceStores

LOGGER = logging.getLogger(__name__)

US_PER_SECOND = 1_000_000
DAY_US = 86_400 * US_PER_SECOND


class GatewayError(RuntimeError):
    pass


class EventKind(str, Enum):
    FORWARDED = "FORWARDED"
    REWRITTEN = "REWRITTEN"
    QUOTA_DROPPED = "QUOTA_DROPPED"
    DIVERTED_CAPTURE = "DIVERTED_CAPTURE"
    ALERT = "ALERT"


@dataclass(slots=True, frozen=True)
class GatewayEvent:
    time: int
    kind: EventKind
    flow: FlowKey
    direction: Direction
    byte_count: int
    sid: int | None = None
    offsets: tuple[int, ...] = ()
    honeypot_ip: str | None = None
    protocol: Protocol | None = None
    reason: str | None = None
    initiation: bool = False

    def to_dict(self) -> dict[str, Any]:
        return {
            "time": self.time,
            "kind": self.kind.value,
            "flow": self.flow.to_dict(),
            "direction": self.direction.value,
            "byte_count": self.byte_count,
            "sid": self.sid,
            "offsets": list(self.offsets),
            "honeypot_ip": self.honeypot_ip,
            "protocol": self.protocol.value if self.protocol is not None else None,
            "reason": self.reason,
            "initiation": self.initiation,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> GatewayEvent:
        protocol = raw.get("protocol")
        sid = raw.get("sid")
        return cls(
            time=int(raw["time"]),
            kind=EventKind(raw["kind"]),
            flow=FlowKey.from_dict(raw["flow"]),
            direction=Direction(raw["direction"]),
            byte_count=int(raw["byte_count"]),
            sid=int(sid) if sid is not None else None,
            offsets=tuple(int(offset) for offset in raw.get("offsets", [])),
            honeypot_ip=raw.get("honeypot_ip"),
            protocol=Protocol(protocol) if protocol is not None else None,
            reason=raw.get("reason"),
            initiation=bool(raw.get("initiation", False)),
        )


def _default_limits() -> dict[Protocol, int]:
    return {Protocol.TCP: 15, Protocol.UDP: 20}


@dataclass(slots=True)
class QuotaPolicy:
    limits: dict[Protocol, int] = field(default_factory=_default_limits)
    window_us: int = DAY_US

    def __post_init__(self) -> None:
        for protocol, limit in self.limits.items():
            if limit <= 0:
                raise ValueError(f"{protocol.value} quota must be positive, got {limit}")
        if self.window_us <= 0:
            raise ValueError("quota window must be positive")

    def limit_for(self, protocol: Protocol) -> int | None:
        return self.limits.get(protocol)

    def to_dict(self) -> dict[str, Any]:
        return {
            "limits": {protocol.value: limit for protocol, limit in sorted(self.limits.items())},
            "window_us": self.window_us,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> QuotaPolicy:
        limits = raw.get("limits")
        return cls(
            limits=(
                {Protocol(name): int(limit) for name, limit in limits.items()}
                if isinstance(limits, dict)
                else _default_limits()
            ),
            window_us=int(raw.get("window_us", DAY_US)),
        )


QuotaKey = tuple[str, Protocol]


@dataclass(slots=True)
class GatewayState:
    quota_ledger: dict[QuotaKey, deque[int]] = field(default_factory=dict)
    seen_flows: dict[FlowKey, int] = field(default_factory=dict)
    clock: int = 0


class DecisionKind(str, Enum):
    FORWARD = "FORWARD"
    DROP = "DROP"
    DIVERT_TO_COLLECTOR = "DIVERT_TO_COLLECTOR"


@dataclass(slots=True, frozen=True)
class Decision:
    kind: DecisionKind
    packet: Packet | None = None
    reason: str = ""


class ProcessResult(NamedTuple):
    decision: Decision
    state: GatewayState
    events: list[GatewayEvent]


def reset_state(cfg: NetConfig, policy: QuotaPolicy) -> GatewayState:
    return GatewayState()


def quota_check(key: QuotaKey, t: int, state: GatewayState, policy: QuotaPolicy) -> bool:
    limit = policy.limit_for(key[1])
    if limit is None:
        return True
    ledger = state.quota_ledger.setdefault(key, deque())
    if ledger and t < ledger[-1]:
        raise GatewayError(f"quota ledger for {key[0]}/{key[1].value} would go back in time")
    cutoff = t - policy.window_us
    while ledger and ledger[0] <= cutoff:
        ledger.popleft()
    if len(ledger) >= limit:
        return False
    ledger.append(t)
    return True


def is_initiation(packet: Packet, key: FlowKey, state: GatewayState) -> bool:
    if packet.protocol is Protocol.TCP:
        flags = packet.tcp_flags
        return TcpFlag.SYN in flags and TcpFlag.ACK not in flags and key not in state.seen_flows
    if packet.protocol in (Protocol.UDP, Protocol.ICMP):
        return key not in state.seen_flows and key.reversed() not in state.seen_flows
    return False


def process(
    packet: Packet,
    state: GatewayState,
    rules: RuleSet,
    cfg: NetConfig,
    policy: QuotaPolicy,
    stores: EvidenceStores | None = None,
) -> ProcessResult:
    if stores is not None:
        stores.tap(packet)
    if packet.timestamp < state.clock:
        raise GatewayError(f"packet at {packet.timestamp} arrived after clock {state.clock}")
    state.clock = packet.timestamp

    direction = classify_direction(packet, cfg)
    key = flow_key(packet)
    events: list[GatewayEvent] = []

    def emit(kind: EventKind, **extra: Any) -> None:
        events.append(
            GatewayEvent(
                time=packet.timestamp,
                kind=kind,
                flow=key,
                direction=direction,
                byte_count=packet.frame_length,
                **extra,
            )
        )

    if not verify_checksums(packet):
        LOGGER.warning("bad checksum on %s -> %s at %d", packet.src_ip, packet.dst_ip, packet.timestamp)
        emit(EventKind.ALERT, reason="bad-checksum")

    if direction is Direction.CAPTURE_CHANNEL:
        emit(EventKind.DIVERTED_CAPTURE)
        return _finish(Decision(DecisionKind.DIVERT_TO_COLLECTOR, packet), state, events, stores)

    initiation = direction is Direction.OUTBOUND and is_initiation(packet, key, state)
    if initiation:
        allowed = quota_check((packet.src_ip, packet.protocol), packet.timestamp, state, policy)
        if stores is not None:
            stores.firewall(_firewall_line(packet, allowed, state, policy))
        if not allowed:
            LOGGER.info("quota exhausted for %s/%s, dropping", packet.src_ip, packet.protocol.value)
            emit(EventKind.QUOTA_DROPPED, honeypot_ip=packet.src_ip, protocol=packet.protocol)
            return _finish(Decision(DecisionKind.DROP, reason="quota"), state, events, stores)

    state.seen_flows.setdefault(key, packet.timestamp)

    forwarded = packet
    rewritten = False
    for rule in rules:
        if match_rule(rule, packet, cfg) is None:
            continue
        if rule.replace is not None and not rewritten:
            payload, offsets = rewrite_payload(rule, forwarded.payload)
            forwarded = recompute_checksums(replace(forwarded, payload=payload))
            rewritten = True
            LOGGER.info("sid %d rewrote %s -> %s at %s", rule.sid, packet.src_ip, packet.dst_ip, offsets)
            emit(EventKind.REWRITTEN, sid=rule.sid, offsets=tuple(offsets))
        else:
            emit(EventKind.ALERT, sid=rule.sid, reason="signature")

    emit(EventKind.FORWARDED, initiation=initiation)
    if stores is not None:
        stores.forward(forwarded)
    return _finish(Decision(DecisionKind.FORWARD, forwarded), state, events, stores)


def _finish(
    decision: Decision,
    state: GatewayState,
    events: list[GatewayEvent],
    stores: EvidenceStores | None,
) -> ProcessResult:
    LOGGER.debug("decision %s (%d events)", decision.kind.value, len(events))
    if stores is not None:
        for event in events:
            stores.event(event)
    return ProcessResult(decision, state, events)


def _firewall_line(packet: Packet, allowed: bool, state: GatewayState, policy: QuotaPolicy) -> str:
    limit = policy.limit_for(packet.protocol)
    ledger = state.quota_ledger.get((packet.src_ip, packet.protocol))
    count = f"{len(ledger) if ledger is not None else 0}/{limit}" if limit is not None else "-"
    verdict = "ACCEPT" if allowed else "DROP"
    return (
        f"{packet.timestamp} hn-bridge: QUOTA-{verdict} SRC={packet.src_ip} DST={packet.dst_ip} "
        f"PROTO={packet.protocol.value} SPT={packet.src_port} DPT={packet.dst_port} COUNT={count}"
    )
