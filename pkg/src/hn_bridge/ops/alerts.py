"""Swatch-style alerting: pattern predicates over the gateway event stream."""

from __future__ import annotations

from collections.abc import Iterable
from dataclasses import dataclass, field
from enum import Enum
import logging
from typing import Any

import httpx

from hn_bridge.gateway import EventKind, GatewayEvent
from hn_bridge.netmodel import Direction, NetConfig
from hn_bridge.ops.tokens import Honeytoken, TokenHit
from hn_bridge.rulelang import RuleSet

LOGGER = logging.getLogger(__name__)

ANY_HOST = "*"


class AlertConfigError(ValueError):
    pass


class Severity(str, Enum):
    INFO = "info"
    WARNING = "warning"
    CRITICAL = "critical"


class PredicateKind(str, Enum):
    SIGNATURE_SEEN = "SIGNATURE_SEEN"
    TOKEN_SEEN = "TOKEN_SEEN"
    QUOTA_EXCEEDED = "QUOTA_EXCEEDED"
    INBOUND_CONTACT = "INBOUND_CONTACT"


@dataclass(slots=True, frozen=True)
class AlertRule:
    name: str
    predicate: PredicateKind
    subject: str
    severity: Severity = Severity.WARNING

    @property
    def sid(self) -> int:
        return int(self.subject)

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "predicate": self.predicate.value,
            "subject": self.subject,
            "severity": self.severity.value,
        }

    @classmethod
    def from_dict(cls, raw: dict[str, Any]) -> AlertRule:
        try:
            predicate = PredicateKind(str(raw["predicate"]).upper())
            subject = raw.get("subject")
            if subject is None:
                subject = raw.get("sid", raw.get("token", raw.get("host")))
            if subject is None:
                raise AlertConfigError(f"alert {raw.get('name', '?')}: missing subject")
            return cls(
                name=str(raw.get("name", f"{predicate.value.lower()}:{subject}")),
                predicate=predicate,
                subject=str(subject),
                severity=Severity(str(raw.get("severity", Severity.WARNING.value)).lower()),
            )
        except AlertConfigError:
            raise
        except (KeyError, ValueError) as exc:
            raise AlertConfigError(f"malformed alert rule: {exc}") from exc


@dataclass(slots=True, frozen=True)
class Alert:
    rule: str
    predicate: PredicateKind
    subject: str
    severity: Severity
    time: int
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {
            "rule": self.rule,
            "predicate": self.predicate.value,
            "subject": self.subject,
            "severity": self.severity.value,
            "time": self.time,
            "detail": self.detail,
        }


def validate_alert_rules(
    rules: Iterable[AlertRule],
    ruleset: RuleSet | None,
    tokens: Iterable[Honeytoken],
    cfg: NetConfig,
) -> None:
    """Reject rules that can never fire because their subject does not exist."""
    token_ids = {token.id for token in tokens}
    names: set[str] = set()
    for rule in rules:
        if rule.name in names:
            raise AlertConfigError(f"duplicate alert rule name {rule.name}")
        names.add(rule.name)
        match rule.predicate:
            case PredicateKind.SIGNATURE_SEEN:
                if not rule.subject.isdigit():
                    raise AlertConfigError(f"alert {rule.name}: sid must be a positive integer")
                if ruleset is not None and rule.sid not in ruleset.sids:
                    raise AlertConfigError(f"alert {rule.name}: unknown sid {rule.sid}")
            case PredicateKind.TOKEN_SEEN:
                if rule.subject not in token_ids:
                    raise AlertConfigError(f"alert {rule.name}: unknown token {rule.subject}")
            case PredicateKind.QUOTA_EXCEEDED | PredicateKind.INBOUND_CONTACT:
                if rule.subject != ANY_HOST and rule.subject not in cfg.honeypot_ips:
                    raise AlertConfigError(f"alert {rule.name}: {rule.subject} is not a honeypot")


def evaluate_alerts(
    events: Iterable[GatewayEvent],
    rules: Iterable[AlertRule],
    token_hits: Iterable[TokenHit] = (),
) -> list[Alert]:
    rule_list = list(rules)
    hit_list = list(token_hits)
    ordered = sorted(enumerate(events), key=lambda item: (item[1].time, item[0]))
    alerts: list[tuple[int, int, int, Alert]] = []
    for rank, rule in enumerate(rule_list):
        contacted: set[str] = set()
        for position, event in ordered:
            alert = _match_event(rule, event, contacted)
            if alert is not None:
                alerts.append((alert.time, rank, position, alert))
        if rule.predicate is PredicateKind.TOKEN_SEEN:
            for position, hit in enumerate(hit_list):
                if hit.token_id == rule.subject:
                    alert = Alert(rule.name, rule.predicate, rule.subject, rule.severity, hit.time, hit.to_dict())
                    alerts.append((hit.time, rank, position, alert))
    alerts.sort(key=lambda item: item[:3])
    result = [item[3] for item in alerts]
    for alert in result:
        LOGGER.info("alert %s (%s) at %d", alert.rule, alert.severity.value, alert.time)
    return result


def _match_event(rule: AlertRule, event: GatewayEvent, contacted: set[str]) -> Alert | None:
    match rule.predicate:
        case PredicateKind.SIGNATURE_SEEN:
            fired = event.kind in (EventKind.ALERT, EventKind.REWRITTEN) and str(event.sid) == rule.subject
        case PredicateKind.QUOTA_EXCEEDED:
            fired = event.kind is EventKind.QUOTA_DROPPED and rule.subject in (ANY_HOST, event.honeypot_ip)
        case PredicateKind.INBOUND_CONTACT:
            host = event.flow.dst_ip
            fired = (
                event.direction is Direction.INBOUND
                and rule.subject in (ANY_HOST, host)
                and host not in contacted
            )
            if fired:
                contacted.add(host)
        case _:
            fired = False
    if not fired:
        return None
    return Alert(rule.name, rule.predicate, rule.subject, rule.severity, event.time, event.to_dict())


class WebhookNotifier:
    """POSTs alerts as JSON; delivery problems are logged, never raised."""

    def __init__(
        self,
        url: str,
        timeout_seconds: float = 5.0,
        transport: httpx.AsyncBaseTransport | None = None,
    ) -> None:
        self._url = url
        self._timeout = timeout_seconds
        self._transport = transport

    async def deliver(self, alerts: Iterable[Alert]) -> int:
        delivered = 0
        async with httpx.AsyncClient(timeout=self._timeout, transport=self._transport) as http:
            for alert in alerts:
                try:
                    response = await http.post(self._url, json=alert.to_dict())
                    response.raise_for_status()
                except httpx.HTTPError as exc:
                    LOGGER.warning("alert %s not delivered to %s: %s", alert.rule, self._url, exc)
                    continue
                delivered += 1
        return delivered
