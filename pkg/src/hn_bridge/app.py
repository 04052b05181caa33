from __future__ import annotations

import argparse
import json
import logging
from pathlib import Path

from hn_bridge.capture import CaptureStore, collector_ingest
from hn_bridge.config import AppConfig, ConfigError, load_config
from hn_bridge.gateway import DecisionKind, GatewayError, process, reset_state
from hn_bridge.netmodel import PacketError, load_trace
from hn_bridge.ops.alerts import Alert, AlertConfigError, WebhookNotifier, evaluate_alerts, validate_alert_rules
from hn_bridge.ops.evidence import Manifest, evidence_from_stores, load_evidence, write_manifest
from hn_bridge.ops.report import compute_report, render_table
from hn_bridge.ops.tokens import scan_for_tokens
from hn_bridge.rulelang import RuleParseError, RuleSet, parse_ruleset, render_ruleset
from hn_bridge.simnet import ScenarioError, load_scenario, run_scenario
from hn_bridge.stores import EvidenceStores

LOGGER = logging.getLogger(__name__)


def load_rules(path: Path, command: str) -> RuleSet:
    try:
        return parse_ruleset(path.read_text(encoding="utf-8"))
    except OSError as exc:
        raise SystemExit(f"{command} failed: {exc}") from exc
    except RuleParseError as exc:
        raise SystemExit(f"{command} failed: {path}:{exc.line}:{exc.column}: {exc.reason}") from exc


def run_check_rules(path: Path) -> None:
    rules = load_rules(path, "check-rules")
    print(render_ruleset(rules), end="")


async def run_scenario_command(config: AppConfig, args: argparse.Namespace) -> None:
    try:
        scenario = load_scenario(args.scenario)
    except OSError as exc:
        raise SystemExit(f"run failed: {exc}") from exc
    except ScenarioError as exc:
        raise SystemExit(f"run failed: {exc}") from exc
    rules = load_rules(args.rules, "run")
    _check_alert_rules(config, rules, "run")

    manifest = Manifest(config.network, config.quota, config.tokens, scenario.to_dict())
    with EvidenceStores.open_directory(args.out) as stores:
        try:
            log = run_scenario(scenario, config.network, rules, config.quota, stores, config.tokens)
        except ScenarioError as exc:
            raise SystemExit(f"run failed: {exc}") from exc
        alerts = _record_alerts(stores, manifest, rules, config)
    write_manifest(args.out, manifest, rules)
    await _deliver(config, alerts)
    summary = {
        "scenario": scenario.name,
        "packets": log.packet_count,
        "compromised": log.compromised_hosts(),
        "alerts": len(alerts),
        "out": str(args.out),
    }
    print(json.dumps(summary, indent=2))


async def run_replay_command(config: AppConfig, args: argparse.Namespace) -> None:
    rules = load_rules(args.rules, "replay")
    _check_alert_rules(config, rules, "replay")
    manifest = Manifest(config.network, config.quota, config.tokens, {"trace": args.trace.name})
    counts = {kind.value: 0 for kind in DecisionKind}
    with EvidenceStores.open_directory(args.out) as stores:
        state = reset_state(config.network, config.quota)
        capture = CaptureStore(sink=stores)
        try:
            for packet in load_trace(args.trace):
                result = process(packet, state, rules, config.network, config.quota, stores)
                counts[result.decision.kind.value] += 1
                if result.decision.kind is DecisionKind.DIVERT_TO_COLLECTOR:
                    collector_ingest(packet, capture)
        except (OSError, PacketError, GatewayError) as exc:
            raise SystemExit(f"replay failed: {exc}") from exc
        alerts = _record_alerts(stores, manifest, rules, config)
    write_manifest(args.out, manifest, rules)
    await _deliver(config, alerts)
    print(json.dumps({"decisions": counts, "alerts": len(alerts), "out": str(args.out)}, indent=2))


def run_report_command(args: argparse.Namespace, manifest: Manifest | None) -> None:
    directory = _run_directory(args.dir, "report")
    report = compute_report(load_evidence(directory, manifest))
    print(render_table(report))
    print()
    print(json.dumps(report.to_dict(), indent=2, sort_keys=True))


def run_tokens_command(args: argparse.Namespace, manifest: Manifest | None) -> None:
    directory = _run_directory(args.dir, "tokens")
    hits = scan_for_tokens(load_evidence(directory, manifest))
    print(json.dumps([hit.to_dict() for hit in hits], indent=2))


def _run_directory(path: Path, command: str) -> Path:
    if not path.is_dir():
        raise SystemExit(f"{command} failed: {path} is not a directory")
    return path


def _check_alert_rules(config: AppConfig, rules: RuleSet, command: str) -> None:
    try:
        validate_alert_rules(config.alerts, rules, config.tokens, config.network)
    except AlertConfigError as exc:
        raise SystemExit(f"{command} failed: {exc}") from exc


def _record_alerts(stores: EvidenceStores, manifest: Manifest, rules: RuleSet, config: AppConfig) -> list[Alert]:
    evidence = evidence_from_stores(stores, manifest, rules)
    alerts = evaluate_alerts(evidence.events, config.alerts, scan_for_tokens(evidence))
    for alert in alerts:
        stores.alert(alert)
    return alerts


async def _deliver(config: AppConfig, alerts: list[Alert]) -> None:
    if not config.webhook_url or not alerts:
        return
    notifier = WebhookNotifier(config.webhook_url, config.webhook_timeout_seconds)
    delivered = await notifier.deliver(alerts)
    LOGGER.info("delivered %d of %d alerts to %s", delivered, len(alerts), config.webhook_url)


async def run(args: argparse.Namespace) -> None:
    command = args.command
    if command == "check-rules":
        run_check_rules(args.file)
        return

    try:
        config = load_config(args.config)
    except (ConfigError, OSError) as exc:
        raise SystemExit(f"{command} failed: {exc}") from exc

    if command == "run":
        await run_scenario_command(config, args)
        return
    if command == "replay":
        await run_replay_command(config, args)
        return

    # an explicit --config overrides the manifest stored with the run
    manifest = Manifest(config.network, config.quota, config.tokens) if args.config is not None else None
    if command == "report":
        run_report_command(args, manifest)
        return
    if command == "tokens":
        run_tokens_command(args, manifest)
        return

    raise SystemExit(f"Unknown command: {command}")
