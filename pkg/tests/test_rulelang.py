from __future__ import annotations

import random

import pytest

from conftest import CMD_RULE, EXTERNAL, HONEYPOT, NOOP_CONTENT, NOOP_REPLACE, NOOP_RULE
from hn_bridge.netmodel import Protocol, verify_checksums
from hn_bridge.rulelang import (
    AddrKind,
    MatchSpan,
    PatternError,
    RuleParseError,
    RuleProtocol,
    RuleSet,
    apply_replace,
    match_rule,
    parse_pattern,
    parse_ruleset,
    render_pattern,
    render_ruleset,
    rewrite_payload,
)


def character_loop_decode(text: str) -> bytes:
    out = bytearray()
    in_hex = False
    pending = ""
    for char in text:
        if char == "|":
            in_hex = not in_hex
        elif in_hex:
            if char != " ":
                pending += char
                if len(pending) == 2:
                    out.append(int(pending, 16))
                    pending = ""
        else:
            out.append(ord(char))
    return bytes(out)


def brute_force_offsets(payload: bytes, content: bytes) -> list[int]:
    width = len(content)
    return [index for index in range(len(payload) - width + 1) if payload[index : index + width] == content]


def test_noop_rule_parses_field_for_field() -> None:
    rules = parse_ruleset(NOOP_RULE)

    assert len(rules) == 1
    rule = rules.rules[0]
    assert rule.msg == "SHELLCODE x86 stealth NOOP"
    assert rule.rev == 6
    assert rule.sid == 651
    assert rule.content == bytes([0xEB, 0x02, 0xEB, 0x02, 0xEB, 0x02])
    assert rule.replace == bytes([0x24, 0x00, 0x99, 0xDE, 0x6C, 0x3E])
    assert rule.protocol is RuleProtocol.IP
    assert rule.src_addr.kind is AddrKind.HONEYNET
    assert rule.dst_addr.kind is AddrKind.EXTERNAL_NET
    assert rule.src_port.port is None and rule.dst_port.port is None


def test_empty_and_comment_only_input() -> None:
    assert parse_ruleset("") == RuleSet()
    assert len(parse_ruleset("# nothing here\n\n   \n")) == 0


def test_shortened_replace_is_rejected() -> None:
    text = NOOP_RULE.replace("|24 00 99 DE 6C 3E|", "|24 00 99 DE 6C|")
    with pytest.raises(RuleParseError) as excinfo:
        parse_ruleset(text)
    assert "replace length mismatch" in excinfo.value.reason
    assert excinfo.value.line == 4


@pytest.mark.parametrize(
    ("text", "reason"),
    [
        ('drop ip any any -> any any (content:"x"; sid:1;)', "unknown action"),
        ('alert icmp any any -> any any (content:"x"; sid:1;)', "unknown protocol"),
        ('alert ip $HOME_NET any -> any any (content:"x"; sid:1;)', "unknown variable"),
        ('alert ip any any -> any any (replace:"x"; sid:1;)', "replace without content"),
        ('alert ip any any -> any any (content:"|E|"; sid:1;)', "malformed hex span"),
        ('alert ip any any -> any any (content:"|EB 0"; sid:1;)', "malformed hex span"),
        ('alert ip any any -> any any (content:"|ZZ|"; sid:1;)', "malformed hex span"),
        ('alert ip any any -> any any (content:"x"; nocase; sid:1;)', "unknown option"),
        ('alert ip any any -> any any (content:"x";)', "missing sid"),
    ],
)
def test_positioned_parse_errors(text: str, reason: str) -> None:
    with pytest.raises(RuleParseError) as excinfo:
        parse_ruleset(text)
    assert reason in excinfo.value.reason
    assert excinfo.value.line == 1
    assert excinfo.value.column >= 1


def test_duplicate_sid_points_at_second_rule() -> None:
    text = CMD_RULE + CMD_RULE
    with pytest.raises(RuleParseError) as excinfo:
        parse_ruleset(text)
    assert "duplicate sid 1002" in excinfo.value.reason
    assert excinfo.value.line == 2


def test_unknown_variable_column() -> None:
    with pytest.raises(RuleParseError) as excinfo:
        parse_ruleset('alert ip $HOME_NET any -> any any (content:"x"; sid:1;)')
    assert excinfo.value.column == 10


@pytest.mark.parametrize(
    ("pattern", "expected"),
    [
        ("|EB 02 EB 02 EB 02|", bytes.fromhex("EB02EB02EB02")),
        ("cmd.exe", b"cmd.exe"),
        ("a|41|a", bytes([0x61, 0x41, 0x61])),
        ("|0d0a|GET", b"\r\nGET"),
    ],
)
def test_parse_pattern(pattern: str, expected: bytes) -> None:
    assert parse_pattern(pattern) == expected
    assert parse_pattern(pattern) == character_loop_decode(pattern)


def test_parse_pattern_errors() -> None:
    with pytest.raises(PatternError, match="unterminated"):
        parse_pattern("abc|41")
    with pytest.raises(PatternError, match="non-hex"):
        parse_pattern("|4G|")


def test_match_reports_lowest_offset(cfg, make_packet, noop_rules) -> None:
    rule = noop_rules.rules[0]
    payload = bytes(5) + NOOP_CONTENT
    packet = make_packet(HONEYPOT, EXTERNAL, payload=payload)

    assert match_rule(rule, packet, cfg) == MatchSpan(5, 6)
    assert brute_force_offsets(payload, NOOP_CONTENT)[0] == 5


def test_match_needs_payload_and_direction(cfg, make_packet, noop_rules) -> None:
    rule = noop_rules.rules[0]
    assert match_rule(rule, make_packet(HONEYPOT, EXTERNAL), cfg) is None
    assert match_rule(rule, make_packet(HONEYPOT, "10.1.0.6", payload=NOOP_CONTENT), cfg) is None
    assert match_rule(rule, make_packet(EXTERNAL, HONEYPOT, payload=NOOP_CONTENT), cfg) is None


def test_ip_rule_covers_every_protocol(cfg, make_packet, noop_rules) -> None:
    rule = noop_rules.rules[0]
    for protocol in (Protocol.TCP, Protocol.UDP, Protocol.ICMP):
        packet = make_packet(HONEYPOT, EXTERNAL, protocol, payload=NOOP_CONTENT)
        assert match_rule(rule, packet, cfg) == MatchSpan(0, 6)


def test_port_and_protocol_specs(cfg, make_packet, cmd_rules) -> None:
    rule = cmd_rules.rules[0]
    probe = b"GET /scripts/cmd.exe HTTP/1.0"
    assert match_rule(rule, make_packet(EXTERNAL, HONEYPOT, dst_port=80, payload=probe), cfg) is not None
    assert match_rule(rule, make_packet(EXTERNAL, HONEYPOT, dst_port=8080, payload=probe), cfg) is None
    assert match_rule(rule, make_packet(EXTERNAL, HONEYPOT, Protocol.UDP, payload=probe), cfg) is None
    assert match_rule(rule, make_packet(EXTERNAL, HONEYPOT, payload=probe.upper()), cfg) is None


def test_apply_replace_single_occurrence(make_packet, noop_rules) -> None:
    rule = noop_rules.rules[0]
    packet = make_packet(payload=b"\x90" * 4 + NOOP_CONTENT + b"\xcc")

    rewritten = apply_replace(rule, packet)

    assert rewritten.payload == b"\x90" * 4 + NOOP_REPLACE + b"\xcc"
    assert verify_checksums(rewritten)
    assert (rewritten.src_port, rewritten.ttl, rewritten.tcp_flags) == (packet.src_port, packet.ttl, packet.tcp_flags)


def test_apply_replace_without_occurrence(make_packet, noop_rules) -> None:
    packet = make_packet(payload=b"harmless", checksums=False)
    rewritten = apply_replace(noop_rules.rules[0], packet)
    assert rewritten.payload == packet.payload
    assert verify_checksums(rewritten)


def test_back_to_back_occurrences_both_replaced(make_packet, noop_rules) -> None:
    packet = make_packet(payload=NOOP_CONTENT * 2)
    assert apply_replace(noop_rules.rules[0], packet).payload == NOOP_REPLACE * 2
    assert rewrite_payload(noop_rules.rules[0], NOOP_CONTENT * 2)[1] == [0, 6]


def test_rewrite_properties_over_random_payloads(cfg, make_packet, noop_rules) -> None:
    rule = noop_rules.rules[0]
    rng = random.Random(651)
    for _ in range(300):
        payload = bytearray(rng.randbytes(rng.randrange(0, 80)))
        for _ in range(rng.randrange(0, 4)):
            at = rng.randrange(len(payload) + 1)
            payload[at:at] = NOOP_CONTENT
        packet = make_packet(HONEYPOT, EXTERNAL, payload=bytes(payload))

        rewritten = apply_replace(rule, packet)

        assert len(rewritten.payload) == len(packet.payload)
        assert brute_force_offsets(rewritten.payload, NOOP_CONTENT) == []
        assert match_rule(rule, rewritten, cfg) is None
        assert verify_checksums(rewritten)


def test_rescan_removes_occurrence_created_by_replace() -> None:
    rules = parse_ruleset('alert ip any any -> any any (content:"aab"; replace:"abb"; sid:9;)')
    payload, offsets = rewrite_payload(rules.rules[0], b"aaab")
    assert payload == b"abbb"
    assert offsets == [0]
    assert all(payload[offset : offset + 3] == b"abb" for offset in offsets)


def test_rescan_runs_to_fixpoint_on_long_shift(make_packet) -> None:
    rules = parse_ruleset('alert ip any any -> any any (content:"ab"; replace:"ba"; sid:9;)')
    packet = make_packet(payload=b"a" * 40 + b"b")

    payload, offsets = rewrite_payload(rules.rules[0], packet.payload)

    assert payload == b"b" + b"a" * 40
    assert offsets == [0]
    assert b"ab" not in apply_replace(rules.rules[0], packet).payload


def test_render_round_trip(contrib) -> None:
    rules = parse_ruleset((contrib / "rules" / "honeywall.rules").read_text(encoding="utf-8"))
    assert rules.sids == {651, 1002, 1243}

    rendered = render_ruleset(rules)
    assert parse_ruleset(rendered) == rules
    assert rendered.splitlines()[0] == (
        'alert ip $HONEYNET any -> $EXTERNAL_NET any (msg:"SHELLCODE x86 stealth NOOP"; '
        'content:"|EB 02 EB 02 EB 02|"; replace:"|24 00 99 DE 6C 3E|"; sid:651; rev:6;)'
    )


def test_render_escapes_awkward_messages() -> None:
    rules = parse_ruleset(r'alert tcp 10.0.0.0/8 any -> any 25 (msg:"a\;b \"c\""; content:"|7C|x"; sid:5;)')
    assert rules.rules[0].msg == 'a;b "c"'
    assert rules.rules[0].content == b"|x"
    assert parse_ruleset(render_ruleset(rules)) == rules
    assert render_pattern(b"|x") == "|7C 78|"


@pytest.mark.parametrize(
    ("data", "text"),
    [
        (b"GET /x\r\n", "GET /x|0D 0A|"),
        (b"cmd.exe", "cmd.exe"),
        (b"\x90\x90ab\x90", "|90 90 61 62 90|"),
        (b"ab;cd", "|61 62 3B 63 64|"),
    ],
)
def test_render_pattern_prefers_hex_for_binary(data: bytes, text: str) -> None:
    assert render_pattern(data) == text
    assert parse_pattern(text) == data
