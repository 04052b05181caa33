"""Discrete-event harness: scripted hosts exchange packets through the gateway.

Every packet a host sends is handed to ``gateway.process`` at its send time;
forwarded packets reach their destination one hop latency later, capture
packets go straight to the collector. Nothing bypasses the gateway.
"""

from __future__ import annotations

from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from enum import Enum
import heapq
import itertools
import logging
import random
from typing import TYPE_CHECKING, Any

from hn_bridge.capture import CaptureStore, RecordType, collector_ingest, emit
from hn_bridge.gateway import DecisionKind, GatewayEvent, QuotaPolicy, process, reset_state
from hn_bridge.netmodel import (
    NO_FLAGS,
    FlowKey,
    NetConfig,
    Packet,
    Protocol,
    TcpFlag,
    flow_key,
    mac_for_ip,
    recompute_checksums,
)
from hn_bridge.ops.tokens import Honeytoken, TokenError, plant_tokens, validate_tokens
from hn_bridge.rulelang import RuleSet
from hn_bridge.simnet.clock import VirtualClock
from hn_bridge.simnet.hosts import SERVICE_CATALOG, HoneypotEmu, SimHost, build_host
from hn_bridge.simnet.scenario import HostRole, Scenario, ScenarioError, Step, StepAction, validate_scenario

if TYPE_CHECKING:
    from hn_bridge.stores import EvidenceStores

LOGGER = logging.getLogger(__name__)

BASE_LATENCY_US = 150
MAX_JITTER_US = 50
COMMAND_OUTPUT_DELAY_US = 2_000
NOP_SLED = b"\x90" * 16

Action = Callable[[], None]


class LogKind(str, Enum):
    STEP = "STEP"
    SENT = "SENT"
    GATEWAY = "GATEWAY"
    DELIVERED = "DELIVERED"
    COMPROMISED = "COMPROMISED"
    CAPTURE_EMIT = "CAPTURE_EMIT"


@dataclass(slots=True, frozen=True)
class LogEntry:
    seq: int
    time: int
    kind: LogKind
    host: str = ""
    detail: dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> dict[str, Any]:
        return {"seq": self.seq, "time": self.time, "kind": self.kind.value, "host": self.host, "detail": self.detail}


class EventLog:
    """Run history, totally ordered by (time, seq)."""

    def __init__(self, stores: EvidenceStores | None = None) -> None:
        self._stores = stores
        self._entries: list[LogEntry] = []
        self._gateway_events: list[GatewayEvent] = []

    @property
    def entries(self) -> list[LogEntry]:
        return list(self._entries)

    @property
    def gateway_events(self) -> list[GatewayEvent]:
        return list(self._gateway_events)

    @property
    def packet_count(self) -> int:
        return sum(1 for entry in self._entries if entry.kind is LogKind.SENT)

    def compromised_hosts(self) -> list[str]:
        return [entry.host for entry in self._entries if entry.kind is LogKind.COMPROMISED]

    def record(self, time: int, kind: LogKind, host: str = "", **detail: Any) -> LogEntry:
        entry = LogEntry(len(self._entries), time, kind, host, detail)
        self._entries.append(entry)
        if self._stores is not None:
            self._stores.log(entry)
        return entry

    def record_gateway(self, event: GatewayEvent) -> None:
        self._gateway_events.append(event)
        self.record(event.time, LogKind.GATEWAY, event=event.to_dict())


@dataclass(slots=True)
class _Connection:
    pending: list[bytes] = field(default_factory=list)


class Simulation:
    def __init__(
        self,
        scenario: Scenario,
        cfg: NetConfig,
        rules: RuleSet,
        policy: QuotaPolicy,
        stores: EvidenceStores | None = None,
        tokens: Iterable[Honeytoken] = (),
    ) -> None:
        validate_scenario(scenario)
        self._scenario = scenario
        self._cfg = cfg
        self._rules = rules
        self._policy = policy
        self._stores = stores
        self._rng = random.Random(scenario.seed)
        self._clock = VirtualClock()
        self._queue: list[tuple[int, int, Action]] = []
        self._order = itertools.count()
        self._state = reset_state(cfg, policy)
        self._clients: dict[FlowKey, _Connection] = {}
        self._pings: set[FlowKey] = set()
        self.capture = CaptureStore(sink=stores)
        self.log = EventLog(stores)

        self._hosts: dict[str, SimHost] = {}
        self._specs = {spec.ip: spec for spec in scenario.hosts}
        for spec in scenario.hosts:
            self._hosts[spec.ip] = build_host(spec, cfg)
        self._plant(list(tokens))

    @property
    def hosts(self) -> dict[str, SimHost]:
        return dict(self._hosts)

    @property
    def now(self) -> int:
        return self._clock.now

    def host_named(self, name: str) -> SimHost:
        return self._hosts[self._scenario.host_named(name).ip]

    def schedule(self, t: int, action: Action) -> None:
        heapq.heappush(self._queue, (t, next(self._order), action))

    def run(self) -> EventLog:
        LOGGER.info("running scenario %s (seed %d)", self._scenario.name, self._scenario.seed)
        for step in self._scenario.steps:
            self.schedule(step.at_us, self._step_action(self.host_named(step.host), step))
        while self._queue:
            t, _, action = heapq.heappop(self._queue)
            if t > self._scenario.duration_us:
                LOGGER.debug("%d events left past duration", len(self._queue) + 1)
                break
            self._clock.advance_to(t)
            action()
        LOGGER.info("scenario %s finished: %d packets", self._scenario.name, self.log.packet_count)
        return self.log

    def exploit_step(self, attacker: SimHost, target_ip: str, port: int, payload: bytes = b"") -> None:
        body = payload or NOP_SLED + self._scenario.exploit_marker
        self._open_tcp(attacker, target_ip, port, [body])

    def scan_step(
        self,
        attacker: SimHost,
        targets: Iterable[str],
        ports: Iterable[int],
        probe: bytes = b"",
        interval_us: int = 1_000,
        protocol: Protocol = Protocol.TCP,
    ) -> int:
        """Schedule one probe per (target, port); returns the probe count."""
        port_list = list(ports) or [0]
        count = 0
        for index, (target, port) in enumerate(itertools.product(targets, port_list)):
            self.schedule(self.now + index * interval_us, self._probe_action(attacker, target, port, probe, protocol))
            count += 1
        return count

    def _plant(self, tokens: list[Honeytoken]) -> None:
        validate_tokens(tokens)
        forbidden = [service.banner for service in SERVICE_CATALOG.values()]
        forbidden += [service.response for service in SERVICE_CATALOG.values()]
        forbidden += [step.payload for step in self._all_steps()]
        forbidden += [step.output for step in self._all_steps()]
        for token in tokens:
            if any(token.marker in blob for blob in forbidden):
                raise TokenError(f"token {token.id}: marker occurs in a banner or scripted payload")
            host = self._hosts.get(token.host_ip)
            if not isinstance(host, HoneypotEmu):
                LOGGER.debug("token %s targets %s, not a honeypot in this scenario", token.id, token.host_ip)
                continue
            plant_tokens(host, [token])

    def _all_steps(self) -> list[Step]:
        steps = list(self._scenario.steps)
        for spec in self._scenario.hosts:
            steps.extend(spec.on_compromise)
        return steps

    def _step_action(self, host: SimHost, step: Step) -> Action:
        return lambda: self._perform(host, step)

    def _probe_action(self, attacker: SimHost, target: str, port: int, probe: bytes, protocol: Protocol) -> Action:
        return lambda: self._probe(attacker, target, port, probe, protocol)

    def _perform(self, host: SimHost, step: Step) -> None:
        self.log.record(self.now, LogKind.STEP, host.name, action=step.action.value, target=step.target)
        match step.action:
            case StepAction.CONNECT:
                self._contact(host, step, b"")
            case StepAction.SEND:
                self._contact(host, step, step.payload)
            case StepAction.EXPLOIT:
                self.exploit_step(host, step.target, step.port, step.payload)
            case StepAction.SCAN:
                self.scan_step(host, step.targets, step.ports, step.payload, step.interval_us, step.protocol)
            case StepAction.EXFILTRATE:
                self._exfiltrate(host, step)
            case StepAction.COMMAND:
                self._command(host, step)

    def _contact(self, host: SimHost, step: Step, payload: bytes) -> None:
        match step.protocol:
            case Protocol.TCP:
                self._open_tcp(host, step.target, step.port, [payload] if payload else [])
            case Protocol.UDP:
                self._send(host, step.target, Protocol.UDP, host.ephemeral_port(), step.port, payload=payload)
            case Protocol.ICMP:
                self._ping(host, step.target, payload)
            case _:
                self._send(host, step.target, step.protocol, 0, 0, payload=payload)

    def _probe(self, attacker: SimHost, target: str, port: int, probe: bytes, protocol: Protocol) -> None:
        match protocol:
            case Protocol.TCP:
                # half-open: SYN carrying the probe, no connection state kept
                self._send(attacker, target, Protocol.TCP, attacker.ephemeral_port(), port, TcpFlag.SYN, probe)
            case Protocol.UDP:
                self._send(attacker, target, Protocol.UDP, attacker.ephemeral_port(), port, payload=probe)
            case _:
                self._ping(attacker, target, probe)

    def _exfiltrate(self, host: SimHost, step: Step) -> None:
        if not isinstance(host, HoneypotEmu):
            LOGGER.warning("%s holds no tokens, EXFILTRATE ignored", host.name)
            return
        token = host.token_at(step.token_path)
        if token is None:
            LOGGER.warning("%s: nothing planted at %s", host.name, step.token_path)
            return
        document = token.document()
        if step.read_in_shell:
            self._emit(host, RecordType.OUTPUT, host.spawn_pid(), 1, "cat", document)
        self._open_tcp(host, step.target, step.port, [document])

    def _command(self, host: SimHost, step: Step) -> None:
        if not isinstance(host, HoneypotEmu) or host.sensor is None:
            LOGGER.warning("%s runs no capture sensor, COMMAND ignored", host.name)
            return
        pid = host.spawn_pid()
        self._emit(host, RecordType.INPUT, pid, 0, step.command, step.payload)
        if step.output:
            self.schedule(
                self.now + COMMAND_OUTPUT_DELAY_US,
                lambda: self._emit(host, RecordType.OUTPUT, pid, 1, step.command, step.output),
            )

    def _emit(self, host: HoneypotEmu, rec_type: RecordType, pid: int, fd: int, command: str, data: bytes) -> None:
        assert host.sensor is not None
        uid = 0 if host.compromised else 1000
        packet = emit(host.sensor, rec_type, pid, uid, fd, command, data, self.now)
        self.log.record(self.now, LogKind.CAPTURE_EMIT, host.name, counter=host.sensor.counter, bytes=len(data))
        self._transmit(packet)

    def _open_tcp(self, client: SimHost, server_ip: str, port: int, payloads: list[bytes]) -> None:
        sport = client.ephemeral_port()
        self._clients[FlowKey(client.ip, server_ip, Protocol.TCP, sport, port)] = _Connection(list(payloads))
        self._send(client, server_ip, Protocol.TCP, sport, port, TcpFlag.SYN)

    def _ping(self, host: SimHost, target: str, payload: bytes) -> None:
        self._pings.add(FlowKey(host.ip, target, Protocol.ICMP, 0, 0))
        self._send(host, target, Protocol.ICMP, 0, 0, payload=payload)

    def _send(
        self,
        host: SimHost,
        dst_ip: str,
        protocol: Protocol,
        src_port: int,
        dst_port: int,
        flags: TcpFlag = NO_FLAGS,
        payload: bytes = b"",
    ) -> None:
        packet = Packet(
            src_mac=mac_for_ip(host.ip),
            dst_mac=mac_for_ip(dst_ip),
            src_ip=host.ip,
            dst_ip=dst_ip,
            protocol=protocol,
            src_port=src_port,
            dst_port=dst_port,
            tcp_flags=flags,
            payload=payload,
            timestamp=self.now,
        )
        self._transmit(recompute_checksums(packet))

    def _reply(self, host: SimHost, packet: Packet, flags: TcpFlag = NO_FLAGS, payload: bytes = b"") -> None:
        self._send(host, packet.src_ip, packet.protocol, packet.dst_port, packet.src_port, flags, payload)

    def _transmit(self, packet: Packet) -> None:
        sender = self._hosts.get(packet.src_ip)
        self.log.record(
            self.now,
            LogKind.SENT,
            sender.name if sender else packet.src_ip,
            flow=flow_key(packet).to_dict(),
            bytes=packet.frame_length,
        )
        result = process(packet, self._state, self._rules, self._cfg, self._policy, self._stores)
        for event in result.events:
            self.log.record_gateway(event)
        decision = result.decision
        if decision.kind is DecisionKind.DIVERT_TO_COLLECTOR:
            assert decision.packet is not None
            for event in collector_ingest(decision.packet, self.capture):
                self.log.record_gateway(event)
        elif decision.kind is DecisionKind.FORWARD:
            assert decision.packet is not None
            receiver = self._hosts.get(decision.packet.dst_ip)
            if receiver is not None:
                self.schedule(self.now + self._latency(), self._delivery(receiver, decision.packet))

    def _latency(self) -> int:
        return BASE_LATENCY_US + self._rng.randrange(MAX_JITTER_US + 1)

    def _delivery(self, host: SimHost, packet: Packet) -> Action:
        return lambda: self._deliver(host, packet)

    def _deliver(self, host: SimHost, packet: Packet) -> None:
        self.log.record(self.now, LogKind.DELIVERED, host.name, flow=flow_key(packet).to_dict())
        match packet.protocol:
            case Protocol.TCP:
                self._on_tcp(host, packet)
            case Protocol.ICMP:
                self._on_icmp(host, packet)
            case _:
                pass

    def _on_tcp(self, host: SimHost, packet: Packet) -> None:
        flags = packet.tcp_flags
        reverse = flow_key(packet).reversed()
        connection = self._clients.get(reverse)
        if TcpFlag.SYN in flags and TcpFlag.ACK not in flags:
            if host.listens(packet.dst_port):
                self._reply(host, packet, TcpFlag.SYN | TcpFlag.ACK)
            else:
                self._reply(host, packet, TcpFlag.RST | TcpFlag.ACK)
        elif TcpFlag.SYN in flags:
            if connection is None:
                return
            self._reply(host, packet, TcpFlag.ACK)
            for data in connection.pending:
                self._reply(host, packet, TcpFlag.PSH | TcpFlag.ACK, data)
            connection.pending.clear()
        elif TcpFlag.RST in flags:
            if self._clients.pop(reverse, None) is not None:
                LOGGER.debug("%s: connection to %s:%d refused", host.name, packet.src_ip, packet.src_port)
        elif connection is not None or not host.listens(packet.dst_port):
            return
        elif packet.payload:
            self._serve(host, packet)
        elif TcpFlag.ACK in flags:
            banner = host.service(packet.dst_port).banner
            if banner and host.role is not HostRole.ATTACKER:
                self._reply(host, packet, TcpFlag.PSH | TcpFlag.ACK, banner)

    def _serve(self, host: SimHost, packet: Packet) -> None:
        if host.role is HostRole.ATTACKER:
            return
        if self._scenario.exploit_marker in packet.payload:
            self._compromise(host)
        response = host.service(packet.dst_port).response
        if response:
            self._reply(host, packet, TcpFlag.PSH | TcpFlag.ACK, response)

    def _on_icmp(self, host: SimHost, packet: Packet) -> None:
        reverse = flow_key(packet).reversed()
        if reverse in self._pings:
            return
        self._reply(host, packet, payload=packet.payload)

    def _compromise(self, host: SimHost) -> None:
        if not host.mark_compromised(self.now):
            return
        self.log.record(self.now, LogKind.COMPROMISED, host.name, ip=host.ip, role=host.role.value)
        for step in self._specs[host.ip].on_compromise:
            self.schedule(self.now + step.at_us, self._step_action(host, step))


def run_scenario(
    scenario: Scenario,
    cfg: NetConfig,
    rules: RuleSet,
    policy: QuotaPolicy,
    stores: EvidenceStores | None = None,
    tokens: Iterable[Honeytoken] = (),
) -> EventLog:
    try:
        simulation = Simulation(scenario, cfg, rules, policy, stores, tokens)
    except TokenError as exc:
        raise ScenarioError(str(exc)) from exc
    return simulation.run()
