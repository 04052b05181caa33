"""Status metrics computed offline from a run's stores."""

from __future__ import annotations

from collections import Counter, defaultdict
from dataclasses import dataclass, field
import logging
from pathlib import Path
from typing import Any

from hn_bridge.gateway import EventKind, GatewayEvent
from hn_bridge.netmodel import Direction, FlowKey, Packet, Protocol, TcpFlag, classify_direction, flow_key
from hn_bridge.ops.evidence import Evidence, load_evidence
from hn_bridge.ops.tokens import HitSource, scan_for_tokens

LOGGER = logging.getLogger(__name__)


@dataclass(slots=True)
class Report:
    total_bytes: int = 0
    total_packets: int = 0
    unique_source_ips: int = 0
    per_sid_counts: dict[int, int] = field(default_factory=dict)
    per_service_attempts: dict[int, int] = field(default_factory=dict)
    time_to_first_contact: int | None = None
    quota_drops: int = 0
    tokens_exfiltrated: int = 0
    packets_by_direction: dict[str, int] = field(default_factory=dict)
    corrupt_lines: dict[str, int] = field(default_factory=dict)
    consistency_issues: list[str] = field(default_factory=list)

    def to_dict(self) -> dict[str, Any]:
        return {
            "total_bytes": self.total_bytes,
            "total_packets": self.total_packets,
            "unique_source_ips": self.unique_source_ips,
            "per_sid_counts": {str(sid): count for sid, count in sorted(self.per_sid_counts.items())},
            "per_service_attempts": {
                str(port): count for port, count in sorted(self.per_service_attempts.items())
            },
            "time_to_first_contact": self.time_to_first_contact,
            "quota_drops": self.quota_drops,
            "tokens_exfiltrated": self.tokens_exfiltrated,
            "packets_by_direction": dict(sorted(self.packets_by_direction.items())),
            "corrupt_lines": dict(sorted(self.corrupt_lines.items())),
            "consistency_issues": list(self.consistency_issues),
        }


def compute_report(source: Evidence | Path) -> Report:
    evidence = load_evidence(source) if isinstance(source, Path) else source
    cfg = evidence.cfg
    report = Report(corrupt_lines=dict(evidence.corrupt_lines))

    sources: set[str] = set()
    directions: Counter[str] = Counter()
    attempts: dict[int, set[FlowKey]] = defaultdict(set)
    seen: set[FlowKey] = set()
    for packet in evidence.packets:
        report.total_packets += 1
        report.total_bytes += packet.frame_length
        direction = classify_direction(packet, cfg)
        directions[direction.value] += 1
        key = flow_key(packet)
        if direction is Direction.INBOUND:
            sources.add(packet.src_ip)
            if report.time_to_first_contact is None or packet.timestamp < report.time_to_first_contact:
                report.time_to_first_contact = packet.timestamp
            if packet.dst_ip in cfg.honeypot_ips and _is_attempt(packet, key, seen):
                attempts[packet.dst_port].add(key)
        seen.add(key)
    report.unique_source_ips = len(sources)
    report.packets_by_direction = dict(directions)
    report.per_service_attempts = {port: len(keys) for port, keys in sorted(attempts.items())}

    sids: Counter[int] = Counter()
    for event in evidence.events:
        if event.kind in (EventKind.ALERT, EventKind.REWRITTEN) and event.sid is not None:
            sids[event.sid] += 1
        elif event.kind is EventKind.QUOTA_DROPPED:
            report.quota_drops += 1
    report.per_sid_counts = dict(sorted(sids.items()))

    hits = scan_for_tokens(evidence)
    report.tokens_exfiltrated = len({hit.token_id for hit in hits if hit.where is HitSource.PACKET})
    report.consistency_issues = cross_check(evidence)
    return report


def _is_attempt(packet: Packet, key: FlowKey, seen: set[FlowKey]) -> bool:
    if packet.protocol is Protocol.TCP:
        return TcpFlag.SYN in packet.tcp_flags and TcpFlag.ACK not in packet.tcp_flags
    if packet.protocol is Protocol.UDP:
        return key not in seen and key.reversed() not in seen
    return False


def cross_check(evidence: Evidence) -> list[str]:
    """Compare the redundant stores against each other; returns human-readable findings."""
    issues: list[str] = []
    events = evidence.events
    kinds = Counter(event.kind for event in events)

    decided = kinds[EventKind.FORWARDED] + kinds[EventKind.QUOTA_DROPPED] + kinds[EventKind.DIVERTED_CAPTURE]
    if decided != len(evidence.packets):
        issues.append(f"packet store holds {len(evidence.packets)} packets but events record {decided} decisions")
    if kinds[EventKind.FORWARDED] != len(evidence.forwarded):
        issues.append(
            f"{kinds[EventKind.FORWARDED]} FORWARDED events but {len(evidence.forwarded)} forwarded packets"
        )

    drops = sum(1 for line in evidence.firewall if " QUOTA-DROP " in line)
    accepts = sum(1 for line in evidence.firewall if " QUOTA-ACCEPT " in line)
    if drops != kinds[EventKind.QUOTA_DROPPED]:
        issues.append(f"firewall log has {drops} DROP lines, events have {kinds[EventKind.QUOTA_DROPPED]}")
    initiations = sum(1 for event in events if event.kind is EventKind.FORWARDED and event.initiation)
    if accepts != initiations:
        issues.append(f"firewall log has {accepts} ACCEPT lines, events have {initiations} initiations")

    issues.extend(_check_rewrites(evidence, events))
    for issue in issues:
        LOGGER.warning("consistency: %s", issue)
    return issues


def _check_rewrites(evidence: Evidence, events: list[GatewayEvent]) -> list[str]:
    rewrites = [event for event in events if event.kind is EventKind.REWRITTEN]
    if not rewrites:
        return []
    if evidence.rules is None:
        return [f"{len(rewrites)} REWRITTEN events cannot be verified without the rule set"]
    forwarded: dict[tuple[int, FlowKey], list[Packet]] = defaultdict(list)
    for packet in evidence.forwarded:
        forwarded[(packet.timestamp, flow_key(packet))].append(packet)

    issues: list[str] = []
    for event in rewrites:
        rule = evidence.rules.by_sid(event.sid) if event.sid is not None else None
        if rule is None or rule.replace is None:
            issues.append(f"REWRITTEN event at {event.time} names sid {event.sid} with no replace rule")
            continue
        replace = rule.replace
        candidates = forwarded.get((event.time, event.flow), [])
        if not event.offsets or not any(
            all(packet.payload[offset : offset + len(replace)] == replace for offset in event.offsets)
            for packet in candidates
        ):
            issues.append(f"REWRITTEN event at {event.time} (sid {event.sid}) has no matching forwarded packet")
    return issues


def render_table(report: Report) -> str:
    first_contact = (
        "-" if report.time_to_first_contact is None else f"{report.time_to_first_contact / 1_000_000:.6f} s"
    )
    rows: list[tuple[str, str]] = [
        ("total packets", str(report.total_packets)),
        ("total bytes", str(report.total_bytes)),
        ("unique source IPs", str(report.unique_source_ips)),
        ("time to first contact", first_contact),
        ("quota drops", str(report.quota_drops)),
        ("tokens exfiltrated", str(report.tokens_exfiltrated)),
    ]
    rows += [(f"sid {sid}", str(count)) for sid, count in sorted(report.per_sid_counts.items())]
    rows += [(f"service port {port}", str(count)) for port, count in sorted(report.per_service_attempts.items())]
    rows += [(f"direction {name}", str(count)) for name, count in sorted(report.packets_by_direction.items())]
    rows += [(f"corrupt lines {name}", str(count)) for name, count in sorted(report.corrupt_lines.items())]
    rows += [("consistency", issue) for issue in report.consistency_issues]
    width = max(len(label) for label, _ in rows)
    return "\n".join(f"{label:<{width}}  {value}" for label, value in rows)
