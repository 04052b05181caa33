from __future__ import annotations

import pytest

from conftest import NOOP_RULE
from hn_bridge.capture import CaptureRecord, RecordType, StoredRecord, pad_command
from hn_bridge.gateway import QuotaPolicy
from hn_bridge.netmodel import NetConfig
from hn_bridge.ops.evidence import Evidence, Manifest, evidence_from_stores
from hn_bridge.ops.tokens import (
    HitSource,
    Honeytoken,
    TokenError,
    TokenKind,
    plant_tokens,
    scan_for_tokens,
    validate_tokens,
)
from hn_bridge.rulelang import parse_ruleset
from hn_bridge.simnet import ScenarioError, Simulation, load_scenario, run_scenario
from hn_bridge.simnet.hosts import HoneypotEmu
from hn_bridge.simnet.scenario import HostRole
from hn_bridge.stores import StoreName

MAIL = Honeytoken(
    "mail-approvals",
    TokenKind.MAIL,
    bytes.fromhex("4f9a0c13d2b7e6a85c1f3e907b2d6a44"),
    "/home/cfo/mail/approvals.eml",
    "10.1.0.5",
)
SHEET = Honeytoken(
    "sheet-payroll",
    TokenKind.SPREADSHEET,
    bytes.fromhex("a7163be90f2c4d58e1b6937c05da28f1"),
    "/srv/share/payroll-2004.xls",
    "10.1.0.5",
)
VAULT = Honeytoken(
    "vault-keys",
    TokenKind.ENCRYPTED_FILE,
    bytes.fromhex("0d5e92c7b41af3680e7c2b9d5a16f4e3"),
    "/root/.gnupg/vault.gpg",
    "10.1.0.5",
)


def honeypot() -> HoneypotEmu:
    return HoneypotEmu(name="hp1", role=HostRole.HONEYPOT, ip="10.1.0.5")


def test_plant_three_tokens() -> None:
    host = plant_tokens(honeypot(), [MAIL, SHEET, VAULT])
    assert [token.id for token in host.tokens] == ["mail-approvals", "sheet-payroll", "vault-keys"]
    assert host.token_at("/root/.gnupg/vault.gpg") == VAULT


def test_duplicate_marker_is_rejected() -> None:
    clone = Honeytoken("clone", TokenKind.MAIL, MAIL.marker, "/tmp/clone.eml")
    with pytest.raises(TokenError, match="duplicate marker"):
        plant_tokens(honeypot(), [MAIL, clone])
    with pytest.raises(TokenError, match="duplicate marker"):
        plant_tokens(plant_tokens(honeypot(), [MAIL]), [clone])


def test_token_definition_checks() -> None:
    with pytest.raises(TokenError, match="16 bytes"):
        Honeytoken("short", TokenKind.MAIL, b"tiny", "/x")
    with pytest.raises(TokenError, match="duplicate token id"):
        validate_tokens([MAIL, Honeytoken("mail-approvals", TokenKind.MAIL, bytes(16), "/y")])
    with pytest.raises(TokenError, match="already holds"):
        plant_tokens(honeypot(), [MAIL, Honeytoken("other", TokenKind.MAIL, bytes(16), MAIL.planted_path)])
    assert Honeytoken.from_dict(MAIL.to_dict()) == MAIL


@pytest.mark.parametrize("token", [MAIL, SHEET, VAULT])
def test_documents_embed_the_marker_once(token: Honeytoken) -> None:
    assert token.document().count(token.marker) == 1


def run_pivot(contrib, cfg, stores, tokens=(MAIL, SHEET, VAULT)) -> Evidence:
    scenario = load_scenario(contrib / "scenarios" / "compromise-and-pivot.json")
    rules = parse_ruleset(NOOP_RULE)
    run_scenario(scenario, cfg, rules, QuotaPolicy(), stores, tokens)
    return evidence_from_stores(stores, Manifest(cfg, QuotaPolicy(), tuple(tokens)), rules)


def test_exfiltrated_token_is_seen_in_packet_and_capture(cfg, contrib, stores) -> None:
    evidence = run_pivot(contrib, cfg, stores)

    hits = scan_for_tokens(evidence)

    assert [(hit.token_id, hit.where) for hit in hits] == [
        ("mail-approvals", HitSource.CAPTURE),
        ("mail-approvals", HitSource.PACKET),
    ]
    capture, packet = hits
    assert packet.src_ip == "10.1.0.5" and packet.dst_ip == "198.51.100.7"
    assert capture.time <= packet.time

    marker_hex = MAIL.marker.hex()
    assert sum(line.count(marker_hex) for line in stores.lines(StoreName.CAPTURE)) == 1
    assert any(marker_hex in line for line in stores.lines(StoreName.FORWARDED))


def test_no_exfiltration_no_hits(cfg, contrib, stores) -> None:
    scenario = load_scenario(contrib / "scenarios" / "first-contact.json")
    rules = parse_ruleset(NOOP_RULE)
    run_scenario(scenario, cfg, rules, QuotaPolicy(), stores, (MAIL, SHEET, VAULT))
    evidence = evidence_from_stores(stores, Manifest(cfg, QuotaPolicy(), (MAIL, SHEET, VAULT)), rules)
    assert scan_for_tokens(evidence) == []


def test_planted_markers_absent_before_exfiltration(cfg, contrib, stores) -> None:
    scenario = load_scenario(contrib / "scenarios" / "compromise-and-pivot.json")
    simulation = Simulation(scenario, cfg, parse_ruleset(NOOP_RULE), QuotaPolicy(), stores, (MAIL,))
    assert all(MAIL.marker.hex() not in line for name in StoreName for line in stores.lines(name))
    simulation.run()
    assert any(MAIL.marker.hex() in line for line in stores.lines(StoreName.PACKETS))


def test_marker_inside_scripted_payload_is_refused(cfg, contrib) -> None:
    scenario = load_scenario(contrib / "scenarios" / "compromise-and-pivot.json")
    leaky = Honeytoken("leaky", TokenKind.MAIL, b"cd /tmp; wget ht", "/etc/motd", "10.1.0.5")
    with pytest.raises(ScenarioError, match="marker occurs"):
        run_scenario(scenario, cfg, parse_ruleset(""), QuotaPolicy(), None, (leaky,))


def test_scan_for_selected_tokens_only() -> None:
    record = CaptureRecord(
        rec_type=RecordType.OUTPUT,
        counter=1,
        time_sec=0,
        time_usec=5,
        pid=1,
        uid=0,
        fd=1,
        command=pad_command("cat"),
        data=SHEET.document() + VAULT.document(),
    )
    evidence = Evidence(
        cfg=NetConfig(),
        tokens=(SHEET, VAULT),
        captures=[StoredRecord("10.1.0.5", 5, record)],
    )
    assert [hit.token_id for hit in scan_for_tokens(evidence)] == ["sheet-payroll", "vault-keys"]
    assert [hit.token_id for hit in scan_for_tokens(evidence, [VAULT])] == ["vault-keys"]
