"""Offline view of a run directory: the stores plus the manifest describing the run."""

from __future__ import annotations

from collections.abc import Callable
from dataclasses import dataclass, field
import json
import logging
from pathlib import Path
from typing import Any

from hn_bridge.capture import CaptureError, StoredRecord
from hn_bridge.gateway import GatewayEvent, QuotaPolicy
from hn_bridge.netmodel import NetConfig, Packet, PacketError, packet_from_dict
from hn_bridge.ops.tokens import Honeytoken, TokenError
from hn_bridge.rulelang import RuleParseError, RuleSet, parse_ruleset, render_ruleset
from hn_bridge.stores import EvidenceStores, StoreName, parse_jsonl, read_store_lines

LOGGER = logging.getLogger(__name__)

MANIFEST_NAME = "manifest.json"
RULES_NAME = "rules.rules"


@dataclass(slots=True)
class Evidence:
    cfg: NetConfig = field(default_factory=NetConfig)
    policy: QuotaPolicy = field(default_factory=QuotaPolicy)
    tokens: tuple[Honeytoken, ...] = ()
    rules: RuleSet | None = None
    packets: list[Packet] = field(default_factory=list)
    forwarded: list[Packet] = field(default_factory=list)
    events: list[GatewayEvent] = field(default_factory=list)
    captures: list[StoredRecord] = field(default_factory=list)
    raw_captures: int = 0
    firewall: list[str] = field(default_factory=list)
    corrupt_lines: dict[str, int] = field(default_factory=dict)


@dataclass(slots=True)
class Manifest:
    cfg: NetConfig
    policy: QuotaPolicy
    tokens: tuple[Honeytoken, ...] = ()
    scenario: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "network": self.cfg.to_dict(),
            "quota": self.policy.to_dict(),
            "tokens": [token.to_dict() for token in self.tokens],
            "scenario": self.scenario,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> Manifest:
        return cls(
            cfg=NetConfig.from_dict(raw.get("network", {})),
            policy=QuotaPolicy.from_dict(raw.get("quota", {})),
            tokens=tuple(Honeytoken.from_dict(item) for item in raw.get("tokens", [])),
            scenario=dict(raw.get("scenario", {})),
        )


def write_manifest(directory: Path, manifest: Manifest, rules: RuleSet) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    (directory / MANIFEST_NAME).write_text(
        json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    (directory / RULES_NAME).write_text(render_ruleset(rules), encoding="utf-8")


def read_manifest(directory: Path) -> Manifest | None:
    path = directory / MANIFEST_NAME
    if not path.exists():
        return None
    try:
        return Manifest.from_dict(json.loads(path.read_text(encoding="utf-8")))
    except (json.JSONDecodeError, KeyError, TypeError, ValueError) as exc:
        LOGGER.warning("%s unreadable (%s); falling back to defaults", path, exc)
        return None


def load_evidence(directory: Path, manifest: Manifest | None = None) -> Evidence:
    """Read a run directory. Missing stores read as empty; bad lines are counted."""
    resolved = manifest or read_manifest(directory)
    if resolved is None:
        LOGGER.warning("%s has no manifest; using the reference network configuration", directory)
        resolved = Manifest(NetConfig(), QuotaPolicy())
    rules: RuleSet | None = None
    rules_path = directory / RULES_NAME
    if rules_path.exists():
        try:
            rules = parse_ruleset(rules_path.read_text(encoding="utf-8"))
        except RuleParseError as exc:
            LOGGER.warning("%s: %s", rules_path, exc)
    return _collect(lambda name: read_store_lines(directory, name), resolved, rules)


def evidence_from_stores(stores: EvidenceStores, manifest: Manifest, rules: RuleSet | None = None) -> Evidence:
    return _collect(stores.lines, manifest, rules)


def _collect(read: Callable[[StoreName], list[str]], manifest: Manifest, rules: RuleSet | None) -> Evidence:
    evidence = Evidence(cfg=manifest.cfg, policy=manifest.policy, tokens=manifest.tokens, rules=rules)
    evidence.packets = _decode(read, StoreName.PACKETS, packet_from_dict, evidence)
    evidence.forwarded = _decode(read, StoreName.FORWARDED, packet_from_dict, evidence)
    evidence.events = _decode(read, StoreName.EVENTS, GatewayEvent.from_dict, evidence)
    evidence.captures = _decode(read, StoreName.CAPTURE, StoredRecord.from_dict, evidence)
    evidence.raw_captures = len(_decode(read, StoreName.CAPTURE_RAW, dict, evidence))
    evidence.firewall = [line for line in read(StoreName.FIREWALL) if line.strip()]
    return evidence


def _decode[T](
    read: Callable[[StoreName], list[str]],
    name: StoreName,
    build: Callable[[dict[str, Any]], T],
    evidence: Evidence,
) -> list[T]:
    result = parse_jsonl(read(name), name.value)
    items: list[T] = []
    corrupt = result.corrupt
    for record in result.records:
        try:
            items.append(build(record))
        except (CaptureError, PacketError, TokenError, KeyError, TypeError, ValueError) as exc:
            LOGGER.warning("%s: malformed record skipped (%s)", name.value, exc)
            corrupt += 1
    if corrupt:
        evidence.corrupt_lines[name.value] = corrupt
    return items
