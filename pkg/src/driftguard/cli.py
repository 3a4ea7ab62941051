"""drift-guard command line.

Subcommands: init (register a benchmark and mint the first token), serve
(run the proxy plus scheduler), tick (force one detection run), replay
(diff two captured corpora offline), tune (sweep thresholds over a corpus
pair), simulate (run the deterministic mock upstream).

Exit codes: 0 success, 2 invalid input (manifest, rules, script, corpus),
3 upstream or proxy unreachable / detection aborted, 4 address in use,
5 proxy not initialised.
"""

from __future__ import annotations

import argparse
import errno
import json
import logging
import signal
import sys
import threading
from pathlib import Path

import requests

from .config import (
    ConfigError,
    ManifestError,
    load_config,
    load_rules_file,
    parse_manifest,
    resolve_config_path,
)
from .corpus import load_corpus_pair
from .diffing import collect_violations, evaluate_epochs
from .engine import GuardEngine, UpstreamUnreachable
from .proxy import ProxyServer
from .scheduler import OUTCOME_ABORTED, OUTCOME_ROTATED
from .simulator import ScriptError, SimulatorServer, parse_script
from .token import etag_of
from .tuner import tune_thresholds
from .types import ContractError
from .wire import WireFormatError

EXIT_OK = 0
EXIT_INVALID_INPUT = 2
EXIT_UNREACHABLE = 3
EXIT_ADDRESS_IN_USE = 4
EXIT_NOT_INITIALIZED = 5

log = logging.getLogger(__name__)


def _fail(message: str, code: int) -> int:
    print(f"drift-guard: {message}", file=sys.stderr)
    return code


def _client_base_url(config) -> str:
    host = config.listen_host
    if host in ("0.0.0.0", "::"):
        host = "127.0.0.1"
    return f"http://{host}:{config.listen_port}"


def _load_config_arg(args):
    path = resolve_config_path(args.config)
    return load_config(path)


def _wait_for_interrupt():
    stop = threading.Event()

    def handler(signum, frame):
        stop.set()

    previous = {
        signal.SIGINT: signal.signal(signal.SIGINT, handler),
        signal.SIGTERM: signal.signal(signal.SIGTERM, handler),
    }
    try:
        stop.wait()
    finally:
        for signum, old in previous.items():
            signal.signal(signum, old)


# ------------------------------------------------------------------ commands


def cmd_init(args) -> int:
    try:
        config = _load_config_arg(args)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    try:
        items = parse_manifest(args.manifest)
    except ManifestError as exc:
        for lineno, message in exc.errors:
            print(f"{exc.path}:{lineno}: {message}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except OSError as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)

    body = {"items": [item.to_dict() for item in items], "rules": config.rules.to_dict()}
    try:
        reply = requests.post(f"{_client_base_url(config)}/benchmark", json=body, timeout=300)
    except requests.RequestException:
        return _init_embedded(config, items)
    if reply.status_code == 201:
        metadata = reply.json()
        print(f"token_id: {metadata['token_id']}")
        print(f"etag: {reply.headers.get('ETag', '')}")
        return EXIT_OK
    if reply.status_code == 502:
        return _fail(f"upstream unreachable: {reply.json().get('error', '')}", EXIT_UNREACHABLE)
    return _fail(f"proxy rejected the benchmark: {reply.json().get('error', reply.status_code)}",
                 EXIT_INVALID_INPUT)


def _init_embedded(config, items) -> int:
    # No proxy is listening; bootstrap directly against the storage path so
    # a later `serve` picks the token up.
    engine = GuardEngine(config)
    try:
        token = engine.initialize_benchmark(items, config.rules)
    except ContractError as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    except UpstreamUnreachable as exc:
        return _fail(str(exc), EXIT_UNREACHABLE)
    print(f"token_id: {token.token_id}")
    print(f"etag: {etag_of(token)}")
    return EXIT_OK


def cmd_serve(args) -> int:
    try:
        config = _load_config_arg(args)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    engine = GuardEngine(config)
    try:
        server = ProxyServer(config, engine=engine)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            return _fail(f"address {config.listen} is already in use", EXIT_ADDRESS_IN_USE)
        return _fail(str(exc), EXIT_ADDRESS_IN_USE)
    from .scheduler import Scheduler

    scheduler = Scheduler(engine, config.schedule_interval_secs)
    server.start()
    scheduler.start()
    print(f"listening on {server.base_url}", flush=True)
    try:
        _wait_for_interrupt()
    finally:
        scheduler.stop()
        server.stop()
    return EXIT_OK


def cmd_tick(args) -> int:
    try:
        config = _load_config_arg(args)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    try:
        reply = requests.post(f"{_client_base_url(config)}/admin/detect", timeout=300)
    except requests.RequestException as exc:
        return _fail(f"proxy unreachable: {exc}", EXIT_UNREACHABLE)
    if reply.status_code == 409:
        return _fail("proxy has no benchmark yet", EXIT_NOT_INITIALIZED)
    try:
        payload = reply.json()
    except ValueError:
        payload = {}
    if reply.status_code != 202 or payload.get("outcome") == OUTCOME_ABORTED:
        return _fail(f"detection aborted: {payload.get('reason')}", EXIT_UNREACHABLE)
    if payload.get("outcome") == OUTCOME_ROTATED:
        print(f"token_rotated: {payload['old_token_id']} -> {payload['new_token_id']}")
    else:
        print("no_change")
    return EXIT_OK


def _load_pair(args):
    items = None
    if getattr(args, "manifest", None):
        items = parse_manifest(args.manifest)
    return load_corpus_pair(args.old, args.new, items)


def cmd_replay(args) -> int:
    try:
        rules = load_rules_file(args.rules)
    except (ConfigError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    try:
        dataset, old_snapshot, new_snapshot = _load_pair(args)
    except (ContractError, ManifestError, WireFormatError, OSError, ValueError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    report = evaluate_epochs(old_snapshot, new_snapshot, dataset, rules)
    violations = collect_violations(old_snapshot, new_snapshot, dataset, rules)
    document = report.to_dict()
    document["violations"] = [
        {
            "image_ref": v.image_ref,
            "error_code": v.error_code,
            "error_type": v.error_type,
            "reason": v.reason,
        }
        for v in violations
    ]
    print(json.dumps(document, sort_keys=True, ensure_ascii=False, indent=2))
    return EXIT_OK


def cmd_tune(args) -> int:
    try:
        label_grid = [int(v) for v in args.labels.split(",") if v.strip()]
        confidence_grid = [float(v) for v in args.confs.split(",") if v.strip()]
    except ValueError as exc:
        return _fail(f"bad grid: {exc}", EXIT_INVALID_INPUT)
    rules = None
    if args.rules:
        try:
            rules = load_rules_file(args.rules)
        except (ConfigError, OSError) as exc:
            return _fail(str(exc), EXIT_INVALID_INPUT)
    try:
        dataset, old_snapshot, new_snapshot = _load_pair(args)
        matrix = tune_thresholds(
            old_snapshot, new_snapshot, dataset, label_grid, confidence_grid, base_rules=rules
        )
    except (ContractError, ManifestError, WireFormatError, OSError, ValueError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    print(matrix.to_tsv(pretty=args.pretty))
    return EXIT_OK


def cmd_simulate(args) -> int:
    try:
        text = Path(args.script).read_text(encoding="utf-8")
        script = parse_script(text, seed=args.seed)
    except (ScriptError, ContractError, OSError) as exc:
        return _fail(str(exc), EXIT_INVALID_INPUT)
    try:
        server = SimulatorServer(script, host=args.host, port=args.port)
    except OSError as exc:
        if exc.errno == errno.EADDRINUSE:
            return _fail(f"port {args.port} is already in use", EXIT_ADDRESS_IN_USE)
        return _fail(str(exc), EXIT_ADDRESS_IN_USE)
    server.start()
    print(f"simulator listening on {server.endpoint} (seed {script.seed})", flush=True)
    try:
        _wait_for_interrupt()
    finally:
        server.stop()
    return EXIT_OK


# ------------------------------------------------------------------- parsing


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="drift-guard",
        description="Guard proxy for evolving image-labelling services",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_init = sub.add_parser("init", help="register a benchmark and mint the first token")
    p_init.add_argument("--manifest", required=True, help="benchmark manifest (TSV)")
    p_init.add_argument("--config", default=None, help="proxy config file")
    p_init.set_defaults(func=cmd_init)

    p_serve = sub.add_parser("serve", help="run the proxy and scheduler")
    p_serve.add_argument("--config", default=None, help="proxy config file")
    p_serve.set_defaults(func=cmd_serve)

    p_tick = sub.add_parser("tick", help="force one detection run")
    p_tick.add_argument("--config", default=None, help="proxy config file")
    p_tick.set_defaults(func=cmd_tick)

    p_replay = sub.add_parser("replay", help="diff two captured corpora")
    p_replay.add_argument("--old", required=True, help="directory of old-epoch responses")
    p_replay.add_argument("--new", required=True, help="directory of new-epoch responses")
    p_replay.add_argument("--rules", required=True, help="threshold rules file")
    p_replay.add_argument("--manifest", default=None, help="optional benchmark manifest")
    p_replay.set_defaults(func=cmd_replay)

    p_tune = sub.add_parser("tune", help="sweep thresholds over a corpus pair")
    p_tune.add_argument("--old", required=True)
    p_tune.add_argument("--new", required=True)
    p_tune.add_argument("--labels", required=True, help="comma-joined max_delta_labels grid")
    p_tune.add_argument("--confs", required=True, help="comma-joined max_delta_confidence grid")
    p_tune.add_argument("--rules", default=None, help="optional rules file (global expected labels)")
    p_tune.add_argument("--manifest", default=None, help="optional benchmark manifest")
    p_tune.add_argument("--pretty", action="store_true", help="align columns for reading")
    p_tune.set_defaults(func=cmd_tune)

    p_sim = sub.add_parser("simulate", help="serve the deterministic mock upstream")
    p_sim.add_argument("--script", required=True, help="drift script file")
    p_sim.add_argument("--seed", type=int, default=0)
    p_sim.add_argument("--port", type=int, required=True)
    p_sim.add_argument("--host", default="127.0.0.1")
    p_sim.set_defaults(func=cmd_simulate)

    return parser


def main(argv=None) -> int:
    logging.basicConfig(
        level=logging.INFO, format="%(asctime)s %(name)s %(levelname)s %(message)s"
    )
    args = build_parser().parse_args(argv)
    return args.func(args)


def entrypoint():
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
