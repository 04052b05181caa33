from __future__ import annotations

from collections.abc import Callable
from pathlib import Path
from typing import Any

import pytest

from hn_bridge.netmodel import NetConfig, Packet, Protocol, mac_for_ip, recompute_checksums
from hn_bridge.rulelang import RuleSet, parse_ruleset
from hn_bridge.stores import EvidenceStores

REPO_ROOT = Path(__file__).resolve().parents[1]
CONTRIB = REPO_ROOT / "contrib"

NOOP_RULE = """\
alert ip $HONEYNET any -> $EXTERNAL_NET any
(msg:"SHELLCODE x86 stealth NOOP"; rev:6; sid:651;
content:"|EB 02 EB 02 EB 02|";
replace:"|24 00 99 DE 6C 3E|";)
"""

CMD_RULE = 'alert tcp $EXTERNAL_NET any -> $HONEYNET 80 (msg:"WEB-IIS cmd.exe access"; content:"cmd.exe"; sid:1002;)\n'

NOOP_CONTENT = bytes.fromhex("EB02EB02EB02")
NOOP_REPLACE = bytes.fromhex("240099DE6C3E")

HONEYPOT = "10.1.0.5"
EXTERNAL = "198.51.100.7"

PacketFactory = Callable[..., Packet]


@pytest.fixture
def cfg() -> NetConfig:
    return NetConfig()


@pytest.fixture
def noop_rules() -> RuleSet:
    return parse_ruleset(NOOP_RULE)


@pytest.fixture
def cmd_rules() -> RuleSet:
    return parse_ruleset(CMD_RULE)


@pytest.fixture
def stores() -> EvidenceStores:
    return EvidenceStores.in_memory()


@pytest.fixture
def make_packet() -> PacketFactory:
    def build(
        src_ip: str = HONEYPOT,
        dst_ip: str = EXTERNAL,
        protocol: Protocol = Protocol.TCP,
        *,
        checksums: bool = True,
        **fields: Any,
    ) -> Packet:
        fields.setdefault("src_port", 4000 if protocol is not Protocol.ICMP else 0)
        fields.setdefault("dst_port", 80 if protocol is not Protocol.ICMP else 0)
        packet = Packet(
            src_mac=mac_for_ip(src_ip),
            dst_mac=mac_for_ip(dst_ip),
            src_ip=src_ip,
            dst_ip=dst_ip,
            protocol=protocol,
            **fields,
        )
        return recompute_checksums(packet) if checksums else packet

    return build


@pytest.fixture
def contrib() -> Path:
    return CONTRIB
