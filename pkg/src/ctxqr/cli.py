"""``ctxqr`` command line.

Exit status: 0 on success, 1 on bad input, 2 on internal failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from typing import Any, Sequence

from .errors import CtxQrError
from .fingerprint import (
    DEFAULT_FLOOR,
    DEFAULT_K,
    Fingerprint,
    KnnConfig,
    fingerprint_from_json,
    fingerprint_to_json,
    knn_locate,
    load_radio_map,
    radio_map_to_json,
)
from .qr import (
    DEFAULT_MAX_APS,
    RewriteConfig,
    parse_context_params,
    pseudonymize_mac,
    require_http_url,
    rewrite_url_inline,
    rewrite_url_stored,
)
from .rules import EvalContext, evaluate_all, parse_rules
from .sim import SimConfig, eval_accuracy, generate_radio_map, load_sim_config, simulate_scan
from .store import ScanStore, event_to_json, parse_ts, utc_now

log = logging.getLogger("ctxqr")


class InputError(Exception):
    """Bad command-line input not covered by a domain error."""


class _ArgumentParser(argparse.ArgumentParser):
    # usage errors are input errors: exit 1, not argparse's default 2
    def error(self, message: str) -> None:  # type: ignore[override]
        self.print_usage(sys.stderr)
        self.exit(1, f"{self.prog}: error: {message}\n")


def _read_json(path: str) -> Any:
    try:
        if path == "-":
            return json.load(sys.stdin)
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}: invalid JSON ({exc})") from None


def _read_text(path: str) -> str:
    if path == "-":
        return sys.stdin.read()
    with open(path, encoding="utf-8") as fh:
        return fh.read()


def _read_scan(path: str) -> tuple[Fingerprint, dict[str, Any]]:
    """A scan file is either a bare ``aps`` array or an object with ``aps``."""
    data = _read_json(path)
    meta: dict[str, Any] = {}
    if isinstance(data, dict):
        meta = data
        data = data.get("aps")
    return fingerprint_from_json(data), meta


def _emit(obj: Any) -> None:
    sys.stdout.write(json.dumps(obj, indent=2, ensure_ascii=False) + "\n")


def _sim_config(args: argparse.Namespace) -> SimConfig:
    cfg = load_sim_config(args.config) if args.config else SimConfig()
    if args.seed is not None:
        cfg = replace(cfg, seed=args.seed)
    if getattr(args, "sigma", None) is not None:
        cfg = replace(cfg, sigma=args.sigma)
    return cfg


def cmd_rewrite(args: argparse.Namespace) -> int:
    require_http_url(args.payload)
    if args.context_id is not None:
        print(rewrite_url_stored(args.payload, args.context_id))
        return 0
    if not args.scan:
        raise InputError("inline rewrite needs --scan")
    fp, _ = _read_scan(args.scan)
    cfg = RewriteConfig(max_aps=args.max_aps, pseudonymize=args.salt is not None, salt=args.salt)
    print(rewrite_url_inline(args.payload, fp, cfg))
    return 0


def cmd_parse(args: argparse.Namespace) -> int:
    params = parse_context_params(args.url)
    out: dict[str, Any] = {"mode": params.mode.value}
    if params.context_id is not None:
        out["context_id"] = params.context_id
    if params.fingerprint is not None:
        out["aps"] = fingerprint_to_json(params.fingerprint)
    if params.pseudonymous_aps:
        out["aps"] = [{"token": t, "rssi": r} for t, r in params.pseudonymous_aps]
    if params.extra:
        out["extra"] = params.extra
    _emit(out)
    return 0


def _user_token(user: str | None, salt: str | None) -> str:
    if not user:
        raise InputError("a user (device MAC or token) is required")
    return pseudonymize_mac(user, salt) if salt else user


def cmd_store(args: argparse.Namespace) -> int:
    fp, meta = _read_scan(args.scan)
    user = args.user or meta.get("user")
    url = args.url or meta.get("url")
    if not url:
        raise InputError("a target URL is required (--url or 'url' in the scan)")
    ts = parse_ts(args.ts) if args.ts else None
    require_http_url(url)
    with ScanStore(args.store) as store:
        context_id = store.store_scan(_user_token(user, args.salt), fp, url, ts)
    _emit({"context_id": context_id, "augmented_url": rewrite_url_stored(url, context_id)})
    return 0


def cmd_resolve(args: argparse.Namespace) -> int:
    with ScanStore(args.store) as store:
        if args.param is not None:
            _emit(store.get_parameter_values(args.context_id, args.param))
        elif args.params:
            _emit(store.get_parameter_names(args.context_id))
        else:
            _emit(event_to_json(store.get_context(args.context_id)))
    return 0


def cmd_locate(args: argparse.Namespace) -> int:
    fp, _ = _read_scan(args.scan)
    est = knn_locate(fp, load_radio_map(args.map), KnnConfig(args.k, args.floor))
    _emit({
        "lat": est.latitude,
        "lon": est.longitude,
        "neighbors": [{"label": n.entry.label, "lat": n.entry.latitude, "lon": n.entry.longitude,
                       "distance": n.distance} for n in est.neighbors],
    })
    return 0


def cmd_rules_check(args: argparse.Namespace) -> int:
    rules = parse_rules(_read_text(args.rules))
    print(f"OK, {len(rules)} rule{'s' if len(rules) != 1 else ''}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    rules = parse_rules(_read_text(args.rules))
    now = parse_ts(args.now) if args.now else utc_now()
    with ScanStore(args.store) as store:
        if args.context_id is not None:
            event = store.get_context(args.context_id)
            ctx = EvalContext(event.user_token, now, store, event.fingerprint, args.floor, event_id=event.id)
        elif args.scan:
            fp, meta = _read_scan(args.scan)
            ctx = EvalContext(_user_token(args.user or meta.get("user"), args.salt), now, store, fp, args.floor)
        else:
            raise InputError("evaluate needs --context-id or --scan")
        _emit({"actions": evaluate_all(rules, ctx)})
    return 0


def cmd_simulate(args: argparse.Namespace) -> int:
    fp = simulate_scan((args.x, args.y), _sim_config(args), args.realization)
    _emit(fingerprint_to_json(fp))
    return 0


def cmd_radiomap(args: argparse.Namespace) -> int:
    data = radio_map_to_json(generate_radio_map(_sim_config(args)))
    if args.output:
        with open(args.output, "w", encoding="utf-8") as fh:
            json.dump(data, fh, indent=1)
            fh.write("\n")
    else:
        _emit(data)
    return 0


def cmd_accuracy(args: argparse.Namespace) -> int:
    cfg = _sim_config(args)
    radio_map = load_radio_map(args.map) if args.map else generate_radio_map(cfg)
    report = eval_accuracy(radio_map, args.queries, cfg, k=args.k, floor=args.floor)
    _emit(report.to_json())
    return 0


def cmd_serve(args: argparse.Namespace) -> int:
    from .service import ServiceConfig, serve

    cfg = ServiceConfig.load(args.config)
    cfg.validate()
    serve(cfg)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="ctxqr", description="Context-aware QR payload toolkit.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("rewrite", help="add Wi-Fi context to a decoded QR payload")
    p.add_argument("payload")
    p.add_argument("--scan", help="scan JSON file (inline mode)")
    p.add_argument("--context-id", help="stored-mode context id instead of inline APs")
    p.add_argument("--max-aps", type=int, default=DEFAULT_MAX_APS)
    p.add_argument("--salt", help="pseudonymize BSSIDs with this key")
    p.set_defaults(func=cmd_rewrite)

    p = sub.add_parser("parse", help="extract context from a rewritten URL")
    p.add_argument("url")
    p.set_defaults(func=cmd_parse)

    p = sub.add_parser("store", help="store a scan and print its context id")
    p.add_argument("--store", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--user")
    p.add_argument("--url")
    p.add_argument("--ts", help="RFC 3339 UTC timestamp (default: now)")
    p.add_argument("--salt", help="pseudonymize the user MAC with this key")
    p.set_defaults(func=cmd_store)

    p = sub.add_parser("resolve", help="look up a stored context")
    p.add_argument("context_id")
    p.add_argument("--store", required=True)
    p.add_argument("--params", action="store_true", help="list parameter names")
    p.add_argument("--param", help="print the values of one parameter")
    p.set_defaults(func=cmd_resolve)

    p = sub.add_parser("locate", help="k-NN position estimate for a scan")
    p.add_argument("--map", required=True)
    p.add_argument("--scan", required=True)
    p.add_argument("--k", type=int, default=DEFAULT_K)
    p.add_argument("--floor", type=int, default=DEFAULT_FLOOR)
    p.set_defaults(func=cmd_locate)

    p = sub.add_parser("rules", help="rule file utilities")
    rsub = p.add_subparsers(dest="rules_command", required=True)
    rc = rsub.add_parser("check", help="parse a rules file and report")
    rc.add_argument("--rules", required=True)
    rc.set_defaults(func=cmd_rules_check)

    p = sub.add_parser("evaluate", help="run rules against a stored or inline scan")
    p.add_argument("--rules", required=True)
    p.add_argument("--store", required=True)
    p.add_argument("--context-id")
    p.add_argument("--scan")
    p.add_argument("--user")
    p.add_argument("--salt")
    p.add_argument("--now", help="RFC 3339 UTC evaluation time (default: now)")
    p.add_argument("--floor", type=int, default=DEFAULT_FLOOR)
    p.set_defaults(func=cmd_evaluate)

    for name, func, text in (
        ("simulate", cmd_simulate, "simulate one scan"),
        ("radiomap", cmd_radiomap, "generate a simulated radio map"),
        ("accuracy", cmd_accuracy, "k-NN accuracy over simulated queries"),
    ):
        p = sub.add_parser(name, help=text)
        p.add_argument("--config", help="simulator config JSON")
        p.add_argument("--seed", type=int)
        p.add_argument("--sigma", type=float)
        p.set_defaults(func=func)
        if name == "simulate":
            p.add_argument("--x", type=float, required=True)
            p.add_argument("--y", type=float, required=True)
            p.add_argument("--realization", type=int, default=0)
        elif name == "radiomap":
            p.add_argument("-o", "--output")
        else:
            p.add_argument("--map", help="radio map JSON (default: generate from config)")
            p.add_argument("--queries", type=int, default=500)
            p.add_argument("--k", type=int, default=DEFAULT_K)
            p.add_argument("--floor", type=int, default=DEFAULT_FLOOR)

    p = sub.add_parser("serve", help="run the proximity HTTP service")
    p.add_argument("--config", help="service config (INI, [service] section)")
    p.set_defaults(func=cmd_serve)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:  # --help or a usage error
        return exc.code if isinstance(exc.code, int) else 1
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except CtxQrError as exc:
        print(f"error: {exc.code}: {exc}", file=sys.stderr)
        return 1
    except (InputError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception:
        log.exception("internal error")
        return 2


if __name__ == "__main__":
    sys.exit(main())
