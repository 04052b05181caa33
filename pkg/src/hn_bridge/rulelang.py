"""Inline signature rules: parser, matcher and payload rewriter.

Grammar (see docs/rule-language.md)::

    rule    := action proto addr port "->" addr port "(" option (";" option)* ";"? ")"
    action  := "alert"
    proto   := "ip" | "tcp" | "udp"
    addr    := "$HONEYNET" | "$EXTERNAL_NET" | "any" | a.b.c.d["/"n]
    port    := "any" | 0..65535
    option  := name ":" value        name in msg, content, replace, sid, rev

A rule may continue over several lines until its closing ``)``.
"""

from __future__ import annotations

from collections.abc import Iterator
from dataclasses import dataclass, replace
from enum import Enum
from ipaddress import IPv4Address, IPv4Network
import logging
import string

from hn_bridge.netmodel import NetConfig, Packet, Protocol, recompute_checksums

LOGGER = logging.getLogger(__name__)

OPTION_NAMES = ("msg", "content", "replace", "sid", "rev")
MIN_LITERAL_RUN = 4
_QUOTE_ESCAPES = {'"', "\\", ";"}
_LITERAL_UNSAFE = {"|", '"', ";", "\\"}


class RuleParseError(ValueError):
    def __init__(self, line: int, column: int, reason: str) -> None:
        super().__init__(f"line {line}, column {column}: {reason}")
        self.line = line
        self.column = column
        self.reason = reason


class PatternError(ValueError):
    def __init__(self, reason: str, offset: int = 0) -> None:
        super().__init__(reason)
        self.reason = reason
        self.offset = offset


class RuleAction(str, Enum):
    ALERT = "alert"


class RuleProtocol(str, Enum):
    IP = "ip"
    TCP = "tcp"
    UDP = "udp"

    def covers(self, protocol: Protocol) -> bool:
        if self is RuleProtocol.IP:
            return True
        return protocol.value.lower() == self.value


class AddrKind(str, Enum):
    HONEYNET = "$HONEYNET"
    EXTERNAL_NET = "$EXTERNAL_NET"
    ANY = "any"
    CIDR = "cidr"


@dataclass(slots=True, frozen=True)
class AddrSpec:
    kind: AddrKind
    network: IPv4Network | None = None

    def matches(self, ip: str, cfg: NetConfig) -> bool:
        match self.kind:
            case AddrKind.ANY:
                return True
            case AddrKind.HONEYNET:
                return cfg.in_honeynet(ip)
            case AddrKind.EXTERNAL_NET:
                return not cfg.in_honeynet(ip)
            case AddrKind.CIDR:
                return self.network is not None and IPv4Address(ip) in self.network
        return False

    def render(self) -> str:
        if self.kind is AddrKind.CIDR:
            return str(self.network)
        return self.kind.value


@dataclass(slots=True, frozen=True)
class PortSpec:
    port: int | None = None

    def matches(self, port: int) -> bool:
        return self.port is None or self.port == port

    def render(self) -> str:
        return "any" if self.port is None else str(self.port)


@dataclass(slots=True, frozen=True)
class Rule:
    action: RuleAction
    protocol: RuleProtocol
    src_addr: AddrSpec
    src_port: PortSpec
    dst_addr: AddrSpec
    dst_port: PortSpec
    msg: str
    sid: int
    rev: int
    content: bytes
    replace: bytes | None = None

    def __post_init__(self) -> None:
        if not self.content:
            raise ValueError("content must not be empty")
        if self.replace is not None and len(self.replace) != len(self.content):
            raise ValueError("replace length mismatch")
        if self.sid <= 0 or self.rev <= 0:
            raise ValueError("sid and rev must be positive")


@dataclass(slots=True, frozen=True)
class RuleSet:
    rules: tuple[Rule, ...] = ()

    def __post_init__(self) -> None:
        seen: set[int] = set()
        for rule in self.rules:
            if rule.sid in seen:
                raise ValueError(f"duplicate sid {rule.sid}")
            seen.add(rule.sid)

    def __iter__(self) -> Iterator[Rule]:
        return iter(self.rules)

    def __len__(self) -> int:
        return len(self.rules)

    def by_sid(self, sid: int) -> Rule | None:
        for rule in self.rules:
            if rule.sid == sid:
                return rule
        return None

    @property
    def sids(self) -> frozenset[int]:
        return frozenset(rule.sid for rule in self.rules)


@dataclass(slots=True, frozen=True)
class MatchSpan:
    offset: int
    length: int


def parse_pattern(text: str) -> bytes:
    out = bytearray()
    index = 0
    while index < len(text):
        char = text[index]
        if char != "|":
            out += char.encode("utf-8")
            index += 1
            continue
        end = text.find("|", index + 1)
        if end < 0:
            raise PatternError("unterminated hex span", index)
        digits: list[str] = []
        for position in range(index + 1, end):
            digit = text[position]
            if digit.isspace():
                continue
            if digit not in string.hexdigits:
                raise PatternError(f"non-hex digit {digit!r} in hex span", position)
            digits.append(digit)
        if len(digits) % 2:
            raise PatternError("odd number of hex digits in span", index)
        out += bytes.fromhex("".join(digits))
        index = end + 1
    return bytes(out)


def _is_literal(byte: int) -> bool:
    return 0x20 <= byte < 0x7F and chr(byte) not in _LITERAL_UNSAFE


def render_pattern(data: bytes) -> str:
    """Canonical pattern text.

    Mostly-binary patterns (no literal run of ``MIN_LITERAL_RUN`` characters) become one hex span.
    """
    if not all(_is_literal(byte) for byte in data):
        runs = bytes(byte if _is_literal(byte) else 0 for byte in data).split(b"\x00")
        if max(len(run) for run in runs) < MIN_LITERAL_RUN:
            return "|" + " ".join(f"{byte:02X}" for byte in data) + "|"
    parts: list[str] = []
    hex_run: list[str] = []
    for byte in data:
        if _is_literal(byte):
            if hex_run:
                parts.append("|" + " ".join(hex_run) + "|")
                hex_run = []
            parts.append(chr(byte))
        else:
            hex_run.append(f"{byte:02X}")
    if hex_run:
        parts.append("|" + " ".join(hex_run) + "|")
    return "".join(parts)


def render_rule(rule: Rule) -> str:
    msg = rule.msg.replace("\\", "\\\\").replace('"', '\\"').replace(";", "\\;")
    options = [f'msg:"{msg}"', f'content:"{render_pattern(rule.content)}"']
    if rule.replace is not None:
        options.append(f'replace:"{render_pattern(rule.replace)}"')
    options.append(f"sid:{rule.sid}")
    options.append(f"rev:{rule.rev}")
    header = " ".join(
        (
            rule.action.value,
            rule.protocol.value,
            rule.src_addr.render(),
            rule.src_port.render(),
            "->",
            rule.dst_addr.render(),
            rule.dst_port.render(),
        )
    )
    return f"{header} ({'; '.join(options)};)"


def render_ruleset(rules: RuleSet) -> str:
    return "".join(render_rule(rule) + "\n" for rule in rules)


class _Scanner:
    def __init__(self, text: str) -> None:
        self._text = text
        self._pos = 0
        self.line = 1
        self.column = 1

    def at_end(self) -> bool:
        return self._pos >= len(self._text)

    def peek(self) -> str:
        return "" if self.at_end() else self._text[self._pos]

    def advance(self) -> str:
        char = self._text[self._pos]
        self._pos += 1
        if char == "\n":
            self.line += 1
            self.column = 1
        else:
            self.column += 1
        return char

    def error(self, reason: str) -> RuleParseError:
        return RuleParseError(self.line, self.column, reason)

    def skip_blank(self) -> None:
        while not self.at_end() and self.peek().isspace():
            self.advance()

    def skip_line(self) -> None:
        while not self.at_end() and self.peek() != "\n":
            self.advance()

    def word(self, what: str) -> tuple[str, int, int]:
        self.skip_blank()
        line, column = self.line, self.column
        chars: list[str] = []
        while not self.at_end() and not self.peek().isspace() and self.peek() not in "()":
            chars.append(self.advance())
        if not chars:
            raise RuleParseError(line, column, f"expected {what}")
        return "".join(chars), line, column

    def identifier(self) -> str:
        chars: list[str] = []
        while not self.at_end() and (self.peek().isalnum() or self.peek() == "_"):
            chars.append(self.advance())
        return "".join(chars)

    def quoted(self) -> str:
        self.advance()
        chars: list[str] = []
        while True:
            if self.at_end() or self.peek() == "\n":
                raise self.error("unterminated string")
            char = self.advance()
            if char == '"':
                return "".join(chars)
            if char == "\\":
                if self.at_end() or self.peek() not in _QUOTE_ESCAPES:
                    raise self.error("invalid escape in string")
                char = self.advance()
            chars.append(char)

    def bare_value(self) -> str:
        chars: list[str] = []
        while not self.at_end() and self.peek() not in ";)\n":
            chars.append(self.advance())
        return "".join(chars).strip()


@dataclass(slots=True)
class _OptionValue:
    text: str
    line: int
    column: int


def parse_ruleset(text: str) -> RuleSet:
    scanner = _Scanner(text)
    rules: list[Rule] = []
    first_line: dict[int, int] = {}
    while True:
        scanner.skip_blank()
        if scanner.at_end():
            break
        if scanner.peek() == "#":
            scanner.skip_line()
            continue
        rule, sid_option = _parse_rule(scanner)
        if rule.sid in first_line:
            raise RuleParseError(
                sid_option.line,
                sid_option.column,
                f"duplicate sid {rule.sid} (first defined on line {first_line[rule.sid]})",
            )
        first_line[rule.sid] = sid_option.line
        rules.append(rule)
    LOGGER.debug("parsed %d rules", len(rules))
    return RuleSet(tuple(rules))


def _parse_rule(scanner: _Scanner) -> tuple[Rule, _OptionValue]:
    action_text, line, column = scanner.word("action")
    try:
        action = RuleAction(action_text)
    except ValueError:
        raise RuleParseError(line, column, f"unknown action {action_text!r}") from None
    protocol_text, line, column = scanner.word("protocol")
    try:
        protocol = RuleProtocol(protocol_text)
    except ValueError:
        raise RuleParseError(line, column, f"unknown protocol {protocol_text!r}") from None
    src_addr = _parse_addr(scanner)
    src_port = _parse_port(scanner)
    arrow, line, column = scanner.word("'->'")
    if arrow != "->":
        raise RuleParseError(line, column, f"expected '->', found {arrow!r}")
    dst_addr = _parse_addr(scanner)
    dst_port = _parse_port(scanner)
    scanner.skip_blank()
    if scanner.peek() != "(":
        raise scanner.error("expected '(' to open the option list")
    open_line, open_column = scanner.line, scanner.column
    scanner.advance()
    options = _parse_options(scanner, open_line, open_column)
    while not scanner.at_end() and scanner.peek() in " \t\r":
        scanner.advance()
    if not scanner.at_end() and scanner.peek() not in "\n#":
        raise scanner.error("unexpected text after rule")

    content_option = options.get("content")
    replace_option = options.get("replace")
    if content_option is None:
        if replace_option is not None:
            raise RuleParseError(replace_option.line, replace_option.column, "replace without content")
        raise RuleParseError(open_line, open_column, "missing content option")
    content = _pattern_option(content_option)
    if not content:
        raise RuleParseError(content_option.line, content_option.column, "empty content")
    replacement = None
    if replace_option is not None:
        replacement = _pattern_option(replace_option)
        if len(replacement) != len(content):
            raise RuleParseError(
                replace_option.line,
                replace_option.column,
                f"replace length mismatch ({len(replacement)} bytes, content has {len(content)})",
            )
    sid_option = options.get("sid")
    if sid_option is None:
        raise RuleParseError(open_line, open_column, "missing sid option")
    sid = _positive_int(sid_option, "sid")
    rev_option = options.get("rev")
    rev = _positive_int(rev_option, "rev") if rev_option is not None else 1
    msg_option = options.get("msg")

    rule = Rule(
        action=action,
        protocol=protocol,
        src_addr=src_addr,
        src_port=src_port,
        dst_addr=dst_addr,
        dst_port=dst_port,
        msg=msg_option.text if msg_option is not None else "",
        sid=sid,
        rev=rev,
        content=content,
        replace=replacement,
    )
    return rule, sid_option


def _parse_addr(scanner: _Scanner) -> AddrSpec:
    token, line, column = scanner.word("address")
    if token == "any":
        return AddrSpec(AddrKind.ANY)
    if token.startswith("$"):
        try:
            kind = AddrKind(token)
        except ValueError:
            raise RuleParseError(line, column, f"unknown variable {token!r}") from None
        return AddrSpec(kind)
    try:
        network = IPv4Network(token, strict=False)
    except ValueError:
        raise RuleParseError(line, column, f"invalid address {token!r}") from None
    return AddrSpec(AddrKind.CIDR, network)


def _parse_port(scanner: _Scanner) -> PortSpec:
    token, line, column = scanner.word("port")
    if token == "any":
        return PortSpec()
    if not token.isdigit() or int(token) > 0xFFFF:
        raise RuleParseError(line, column, f"invalid port {token!r}")
    return PortSpec(int(token))


def _parse_options(scanner: _Scanner, open_line: int, open_column: int) -> dict[str, _OptionValue]:
    options: dict[str, _OptionValue] = {}
    while True:
        scanner.skip_blank()
        if scanner.at_end():
            raise RuleParseError(open_line, open_column, "unterminated option list")
        if scanner.peek() == ")":
            scanner.advance()
            return options
        line, column = scanner.line, scanner.column
        name = scanner.identifier()
        if not name:
            raise scanner.error("expected option name")
        if name not in OPTION_NAMES:
            raise RuleParseError(line, column, f"unknown option {name!r}")
        if name in options:
            raise RuleParseError(line, column, f"duplicate option {name!r}")
        scanner.skip_blank()
        if scanner.peek() != ":":
            raise scanner.error(f"expected ':' after {name}")
        scanner.advance()
        scanner.skip_blank()
        value_line, value_column = scanner.line, scanner.column
        if scanner.peek() == '"':
            value_column += 1
            text = scanner.quoted()
        else:
            text = scanner.bare_value()
        options[name] = _OptionValue(text, value_line, value_column)
        scanner.skip_blank()
        if scanner.peek() == ";":
            scanner.advance()
        elif scanner.peek() != ")":
            raise scanner.error("expected ';' or ')'")


def _pattern_option(option: _OptionValue) -> bytes:
    try:
        return parse_pattern(option.text)
    except PatternError as exc:
        raise RuleParseError(
            option.line, option.column + exc.offset, f"malformed hex span: {exc.reason}"
        ) from None


def _positive_int(option: _OptionValue, name: str) -> int:
    if not option.text.isdigit() or int(option.text) <= 0:
        raise RuleParseError(option.line, option.column, f"{name} must be a positive integer")
    return int(option.text)


def match_rule(rule: Rule, packet: Packet, cfg: NetConfig) -> MatchSpan | None:
    if not rule.protocol.covers(packet.protocol):
        return None
    if not (
        rule.src_addr.matches(packet.src_ip, cfg)
        and rule.src_port.matches(packet.src_port)
        and rule.dst_addr.matches(packet.dst_ip, cfg)
        and rule.dst_port.matches(packet.dst_port)
    ):
        return None
    offset = packet.payload.find(rule.content)
    if offset < 0:
        return None
    return MatchSpan(offset, len(rule.content))


def find_occurrences(payload: bytes, content: bytes) -> list[int]:
    """Offsets of non-overlapping occurrences, scanned left to right."""
    offsets: list[int] = []
    start = payload.find(content)
    while start >= 0:
        offsets.append(start)
        start = payload.find(content, start + len(content))
    return offsets


def rewrite_payload(rule: Rule, payload: bytes) -> tuple[bytes, list[int]]:
    """Rewrite until ``content`` no longer occurs.

    Returns the new payload and the offsets that still hold ``replace`` afterwards.
    """
    if rule.replace is None:
        raise ValueError(f"rule {rule.sid} has no replace option")
    buffer = bytearray(payload)
    written: set[int] = set()
    passes = 0
    # Every pass moves the buffer strictly up or strictly down in byte order, so the loop reaches a fixpoint.
    while offsets := find_occurrences(bytes(buffer), rule.content):
        for offset in offsets:
            buffer[offset : offset + len(rule.replace)] = rule.replace
        written.update(offsets)
        passes += 1
        if rule.replace == rule.content:
            break
    if passes > 1:
        LOGGER.debug("sid %d: rewrite settled after %d passes", rule.sid, passes)
    width = len(rule.replace)
    return bytes(buffer), sorted(offset for offset in written if buffer[offset : offset + width] == rule.replace)


def apply_replace(rule: Rule, packet: Packet) -> Packet:
    payload, _ = rewrite_payload(rule, packet.payload)
    return recompute_checksums(replace(packet, payload=payload))
