from __future__ import annotations

from dataclasses import dataclass, field
from ipaddress import IPv4Network
import json
import os
from pathlib import Path
import tomllib
from typing import Any

from hn_bridge.gateway import US_PER_SECOND, QuotaPolicy
from hn_bridge.netmodel import NetConfig, Protocol
from hn_bridge.ops.alerts import AlertConfigError, AlertRule
from hn_bridge.ops.tokens import Honeytoken, TokenError, validate_tokens

DEFAULT_CONFIG_PATH = Path.home() / ".config" / "hn-bridge" / "config.toml"
WEBHOOK_ENV = "HN_BRIDGE_WEBHOOK_URL"


class ConfigError(ValueError):
    pass


@dataclass(slots=True)
class AppConfig:
    network: NetConfig = field(default_factory=NetConfig)
    quota: QuotaPolicy = field(default_factory=QuotaPolicy)
    tokens: tuple[Honeytoken, ...] = ()
    alerts: tuple[AlertRule, ...] = ()
    webhook_url: str = ""
    webhook_timeout_seconds: float = 5.0


def load_config(path: Path | None = None) -> AppConfig:
    if path is not None and not path.exists():
        raise ConfigError(f"{path}: no such file")
    resolved = path or DEFAULT_CONFIG_PATH
    raw = _read(resolved) if resolved.exists() else {}
    network = _section(raw, "network")
    quota = _section(raw, "quota")
    delivery = _section(raw, "delivery")

    try:
        net = NetConfig(
            honeynet_subnet=IPv4Network(str(network.get("honeynet_subnet", "10.1.0.0/26"))),
            collector_ip=str(network.get("collector_ip", "192.0.2.1")),
            capture_port=int(network.get("capture_port", 1101)),
            honeypot_ips=frozenset(str(ip) for ip in network.get("honeypot_ips", ["10.1.0.5", "10.1.0.6"])),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"network: {exc}") from exc

    try:
        tokens = tuple(Honeytoken.from_dict(item) for item in raw.get("tokens", []))
        validate_tokens(tokens)
    except TokenError as exc:
        raise ConfigError(f"tokens: {exc}") from exc
    try:
        alerts = tuple(AlertRule.from_dict(item) for item in raw.get("alerts", []))
    except AlertConfigError as exc:
        raise ConfigError(f"alerts: {exc}") from exc

    configured_url = str(delivery.get("webhook_url", ""))
    webhook_url = os.getenv(WEBHOOK_ENV, configured_url).strip()
    if not _as_bool(delivery.get("enabled", True)):
        webhook_url = ""
    try:
        policy = _quota_policy(quota)
        timeout = float(delivery.get("timeout_seconds", 5.0))
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"quota/delivery: {exc}") from exc
    return AppConfig(
        network=net,
        quota=policy,
        tokens=tokens,
        alerts=alerts,
        webhook_url=webhook_url,
        webhook_timeout_seconds=timeout,
    )


def _read(path: Path) -> dict[str, Any]:
    text = path.read_text(encoding="utf-8")
    try:
        if path.suffix.lower() == ".json":
            raw = json.loads(text)
        else:
            raw = tomllib.loads(text)
    except (json.JSONDecodeError, tomllib.TOMLDecodeError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a table")
    return raw


def _section(raw: dict[str, Any], name: str) -> dict[str, Any]:
    value = raw.get(name, {})
    if not isinstance(value, dict):
        raise ConfigError(f"[{name}] must be a table")
    return value


def _quota_policy(quota: dict[str, Any]) -> QuotaPolicy:
    limits: dict[Protocol, int] = {}
    for key, protocol, default in (("tcp", Protocol.TCP, 15), ("udp", Protocol.UDP, 20), ("icmp", Protocol.ICMP, 0)):
        value = int(quota.get(key, default))
        if value < 0:
            raise ConfigError(f"quota.{key} must not be negative")
        # 0 means unlimited
        if value:
            limits[protocol] = value
    window = float(quota.get("window_seconds", 86_400))
    if window <= 0:
        raise ConfigError("quota.window_seconds must be positive")
    return QuotaPolicy(limits=limits, window_us=int(window * US_PER_SECOND))


def _as_bool(value: object) -> bool:
    if isinstance(value, bool):
        return value
    if isinstance(value, str):
        return value.strip().lower() in {"1", "true", "yes", "on"}
    return bool(value)
