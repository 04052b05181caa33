from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from ipaddress import IPv4Address, IPv4Network
import json
from pathlib import Path
from typing import Any

from hn_bridge.capture import MAX_DATA
from hn_bridge.netmodel import Protocol
from hn_bridge.rulelang import PatternError, parse_pattern

DEFAULT_EXPLOIT_MARKER = bytes.fromhex("EB02EB02EB02")
DEFAULT_SCAN_INTERVAL_US = 1_000


class ScenarioError(ValueError):
    pass


class HostRole(str, Enum):
    ATTACKER = "ATTACKER"
    HONEYPOT = "HONEYPOT"
    EXTERNAL_VICTIM = "EXTERNAL_VICTIM"


class StepAction(str, Enum):
    CONNECT = "CONNECT"
    SEND = "SEND"
    EXPLOIT = "EXPLOIT"
    SCAN = "SCAN"
    EXFILTRATE = "EXFILTRATE"
    COMMAND = "COMMAND"


@dataclass(slots=True, frozen=True)
class Step:
    """One timed action. ``at_us`` is absolute for scenario steps and relative to
    the compromise time for ``on_compromise`` steps."""

    at_us: int
    host: str
    action: StepAction
    target: str = ""
    port: int = 0
    protocol: Protocol = Protocol.TCP
    payload: bytes = b""
    targets: tuple[str, ...] = ()
    ports: tuple[int, ...] = ()
    interval_us: int = DEFAULT_SCAN_INTERVAL_US
    token_path: str = ""
    read_in_shell: bool = False
    command: str = ""
    output: bytes = b""


@dataclass(slots=True, frozen=True)
class HostSpec:
    name: str
    role: HostRole
    ip: str
    services: tuple[int, ...] = ()
    on_compromise: tuple[Step, ...] = ()


@dataclass(slots=True, frozen=True)
class Scenario:
    name: str
    seed: int = 0
    duration_us: int = 0
    hosts: tuple[HostSpec, ...] = ()
    steps: tuple[Step, ...] = ()
    exploit_marker: bytes = DEFAULT_EXPLOIT_MARKER

    def host_named(self, name: str) -> HostSpec:
        for host in self.hosts:
            if host.name == name:
                return host
        raise ScenarioError(f"unknown host {name!r}")

    def to_dict(self) -> dict[str, Any]:
        return {"name": self.name, "seed": self.seed, "duration_us": self.duration_us}


def default_services(role: HostRole) -> tuple[int, ...]:
    if role is HostRole.HONEYPOT:
        return (80, 21, 22)
    if role is HostRole.EXTERNAL_VICTIM:
        return (80,)
    return ()


def load_scenario(path: Path) -> Scenario:
    try:
        raw = json.loads(path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: invalid JSON at line {exc.lineno}: {exc.msg}") from exc
    if not isinstance(raw, dict):
        raise ScenarioError(f"{path}: scenario must be a JSON object")
    return scenario_from_dict(raw)


def scenario_from_dict(raw: dict[str, Any]) -> Scenario:
    try:
        hosts = tuple(_host_from_dict(item) for item in raw.get("hosts", []))
        marker_text = raw.get("exploit_marker")
        scenario = Scenario(
            name=str(raw.get("name", "unnamed")),
            seed=int(raw.get("seed", 0)),
            duration_us=int(raw.get("duration_us", 0)),
            hosts=hosts,
            steps=tuple(_step_from_dict(item) for item in raw.get("steps", [])),
            exploit_marker=_pattern(marker_text) if marker_text is not None else DEFAULT_EXPLOIT_MARKER,
        )
    except ScenarioError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise ScenarioError(f"malformed scenario: {exc}") from exc
    validate_scenario(scenario)
    return scenario


def validate_scenario(scenario: Scenario) -> None:
    if not 0 <= scenario.seed < 1 << 64:
        raise ScenarioError("seed must fit in 64 bits")
    if scenario.duration_us < 0:
        raise ScenarioError("duration_us must be non-negative")
    if not scenario.exploit_marker:
        raise ScenarioError("exploit_marker must not be empty")
    names: set[str] = set()
    ips: set[str] = set()
    for host in scenario.hosts:
        if host.name in names:
            raise ScenarioError(f"duplicate host name {host.name!r}")
        if host.ip in ips:
            raise ScenarioError(f"duplicate host ip {host.ip}")
        names.add(host.name)
        ips.add(host.ip)
        for step in host.on_compromise:
            _validate_step(step, scenario, names_hint=host.name)
    for step in scenario.steps:
        if step.at_us > scenario.duration_us:
            raise ScenarioError(f"step at {step.at_us} lies beyond duration {scenario.duration_us}")
        _validate_step(step, scenario)


def _validate_step(step: Step, scenario: Scenario, names_hint: str | None = None) -> None:
    if step.at_us < 0:
        raise ScenarioError("step times must be non-negative")
    host = names_hint or step.host
    if names_hint is None:
        scenario.host_named(step.host)
    elif step.host and step.host != names_hint:
        raise ScenarioError(f"on_compromise step of {names_hint!r} names another host {step.host!r}")
    match step.action:
        case StepAction.CONNECT | StepAction.SEND | StepAction.EXPLOIT | StepAction.EXFILTRATE:
            if not step.target:
                raise ScenarioError(f"{step.action.value} step of {host!r} needs a target")
            if step.protocol is not Protocol.ICMP and not 0 < step.port <= 0xFFFF:
                raise ScenarioError(f"{step.action.value} step of {host!r} needs a port")
        case StepAction.SCAN:
            if not step.targets:
                raise ScenarioError(f"SCAN step of {host!r} needs targets")
            if step.protocol is not Protocol.ICMP and not step.ports:
                raise ScenarioError(f"SCAN step of {host!r} needs ports")
            if step.interval_us <= 0:
                raise ScenarioError("scan interval_us must be positive")
        case StepAction.COMMAND:
            if not step.command:
                raise ScenarioError(f"COMMAND step of {host!r} needs a command")
            if max(len(step.payload), len(step.output)) > MAX_DATA:
                raise ScenarioError(f"COMMAND step of {host!r} exceeds {MAX_DATA} capture bytes")
    if step.action is StepAction.EXFILTRATE and not step.token_path:
        raise ScenarioError(f"EXFILTRATE step of {host!r} needs a token path")


def expand_targets(raw: object) -> tuple[str, ...]:
    """A SCAN target is a CIDR block (every address, network and broadcast
    included) or an explicit list of addresses."""
    if isinstance(raw, str):
        network = IPv4Network(raw, strict=False)
        return tuple(str(address) for address in network)
    if isinstance(raw, list):
        return tuple(str(IPv4Address(str(item))) for item in raw)
    raise ScenarioError("scan targets must be a CIDR string or a list of addresses")


def _host_from_dict(raw: dict[str, Any]) -> HostSpec:
    role = HostRole(str(raw.get("role", "")).upper())
    name = str(raw["name"])
    services = raw.get("services")
    return HostSpec(
        name=name,
        role=role,
        ip=str(IPv4Address(str(raw["ip"]))),
        services=tuple(int(port) for port in services) if services is not None else default_services(role),
        on_compromise=tuple(_step_from_dict(item, default_host=name) for item in raw.get("on_compromise", [])),
    )


def _step_from_dict(raw: dict[str, Any], default_host: str = "") -> Step:
    action = StepAction(str(raw["action"]).upper())
    port = raw.get("port", 0)
    ports = raw.get("ports")
    return Step(
        at_us=int(raw.get("at_us", 0)),
        host=str(raw.get("host", default_host)),
        action=action,
        target=str(raw.get("target", "")),
        port=int(port),
        protocol=Protocol(str(raw.get("protocol", "TCP")).upper()),
        payload=_pattern(raw.get("input", "") if action is StepAction.COMMAND else raw.get("payload", "")),
        targets=expand_targets(raw["targets"]) if "targets" in raw else (),
        ports=tuple(int(item) for item in ports) if ports is not None else ((int(port),) if port else ()),
        interval_us=int(raw.get("interval_us", DEFAULT_SCAN_INTERVAL_US)),
        token_path=str(raw.get("token", "")),
        read_in_shell=bool(raw.get("read_in_shell", False)),
        command=str(raw.get("command", "")),
        output=_pattern(raw.get("output", "")),
    )


def _pattern(text: object) -> bytes:
    try:
        return parse_pattern(str(text))
    except PatternError as exc:
        raise ScenarioError(f"bad payload pattern {text!r}: {exc}") from exc
