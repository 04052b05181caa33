from __future__ import annotations

from dataclasses import dataclass, field
import logging
from typing import TYPE_CHECKING

from hn_bridge.capture import CaptureSensor
from hn_bridge.netmodel import NetConfig
from hn_bridge.simnet.scenario import HostRole, HostSpec

if TYPE_CHECKING:
    from hn_bridge.ops.tokens import Honeytoken

LOGGER = logging.getLogger(__name__)

EPHEMERAL_PORT_START = 32_768


@dataclass(slots=True, frozen=True)
class ServiceEmulator:
    """Banner-level responder: a greeting on connect, one canned reply per request."""

    port: int
    name: str
    banner: bytes = b""
    response: bytes = b""


SERVICE_CATALOG: dict[int, ServiceEmulator] = {
    21: ServiceEmulator(
        21,
        "ftp",
        banner=b"220 (vsFTPd 1.0.1)\r\n",
        response=b"530 Please login with USER and PASS.\r\n",
    ),
    22: ServiceEmulator(
        22,
        "ssh",
        banner=b"SSH-1.99-OpenSSH_3.0.2p1\r\n",
        response=b"Protocol mismatch.\n",
    ),
    80: ServiceEmulator(
        80,
        "http",
        response=(
            b"HTTP/1.1 404 Not Found\r\n"
            b"Server: Apache/1.3.23 (Unix) PHP/4.1.0\r\n"
            b"Content-Length: 0\r\n"
            b"\r\n"
        ),
    ),
}


def service_for(port: int) -> ServiceEmulator:
    return SERVICE_CATALOG.get(port, ServiceEmulator(port, f"tcp/{port}"))


@dataclass(slots=True)
class SimHost:
    name: str
    role: HostRole
    ip: str
    services: dict[int, ServiceEmulator] = field(default_factory=dict)
    compromised: bool = False
    compromised_at: int | None = None
    next_port: int = EPHEMERAL_PORT_START

    def listens(self, port: int) -> bool:
        # drop sites accept whatever the attacker sends them
        return self.role is HostRole.ATTACKER or port in self.services

    def service(self, port: int) -> ServiceEmulator:
        return self.services.get(port) or service_for(port)

    def ephemeral_port(self) -> int:
        port = self.next_port
        self.next_port = port + 1 if port < 0xFFFF else EPHEMERAL_PORT_START
        return port

    def mark_compromised(self, t: int) -> bool:
        """Flip to compromised; returns False if the host already was."""
        if self.compromised:
            return False
        self.compromised = True
        self.compromised_at = t
        LOGGER.info("%s (%s) compromised at %d", self.name, self.ip, t)
        return True


@dataclass(slots=True)
class HoneypotEmu(SimHost):
    tokens: list[Honeytoken] = field(default_factory=list)
    sensor: CaptureSensor | None = None
    next_pid: int = 1000

    def token_at(self, path: str) -> Honeytoken | None:
        for token in self.tokens:
            if token.planted_path == path:
                return token
        return None

    def spawn_pid(self) -> int:
        pid = self.next_pid
        self.next_pid += 1
        return pid


def build_host(spec: HostSpec, cfg: NetConfig) -> SimHost:
    services = {port: service_for(port) for port in spec.services}
    if spec.role is HostRole.HONEYPOT:
        return HoneypotEmu(
            name=spec.name,
            role=spec.role,
            ip=spec.ip,
            services=services,
            sensor=CaptureSensor(spec.ip, cfg.collector_ip, cfg.capture_port),
        )
    return SimHost(name=spec.name, role=spec.role, ip=spec.ip, services=services)
