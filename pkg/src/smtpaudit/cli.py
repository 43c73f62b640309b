"""Command line entry point: serve, adduser, audit, cost and dread."""

from __future__ import annotations

import argparse
import getpass
import json
import logging
import signal
import sys
from pathlib import Path

from . import __version__
from .audit import ProbeSpec, exit_code, probe, render_report, self_check
from .costmodel import CostInputs, InvalidInput, compute, render_cost_table, report_json
from .server import BindError, CredentialStore, SpoolIoError, serve
from .session import Mode, Policy
from .threatmodel import DreadScore, OutOfRange, format_risk, load_threats, rank, risk

logger = logging.getLogger("smtpaudit")

DREAD_FLAGS = ("damage", "reproducibility", "exploitability", "affected", "discoverability")


class UsageError(Exception):
    pass


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="smtpaudit", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("--json", dest="json_output", action="store_true", help="machine-readable output on stdout")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("serve", help="run the mail server")
    p.add_argument("--mode", choices=[m.value for m in Mode], default="open")
    p.add_argument("--bind", default="127.0.0.1")
    p.add_argument("--port", type=int, default=2525)
    p.add_argument("--users", type=Path, help="credentials file (required for --mode auth)")
    p.add_argument("--spool", type=Path, required=True)
    p.add_argument("--hostname", default="localhost")
    p.add_argument("--banner", default="M.T.A.")
    p.add_argument("--timeout", type=float, default=30.0, help="seconds to wait for each command")
    p.add_argument("--max-connections", type=int, default=64)

    p = sub.add_parser("adduser", help="add a user to a credentials file")
    p.add_argument("--users", type=Path, required=True)
    p.add_argument("--name", required=True)
    p.add_argument("--password-stdin", action="store_true", help="read the password from stdin instead of prompting")

    p = sub.add_parser("audit", help="probe servers for unauthenticated sender spoofing")
    p.add_argument("--host", action="append", required=True, help="target host (repeatable)")
    p.add_argument("--port", type=int, default=25)
    p.add_argument("--from", dest="spoofed_from", required=True)
    p.add_argument("--to", dest="rcpt_to", required=True)
    p.add_argument("--ehlo-name", default="www.test.com")
    p.add_argument("--category", default="Targets")
    p.add_argument("--timeout", type=float, default=10.0)
    p.add_argument("--send", action="store_true", help="complete DATA with a labeled test message")
    p.add_argument("--i-understand-this-sends-mail", dest="ack_send", action="store_true")
    p.add_argument("--json", dest="json_path", type=Path, help="write the full report here")
    p.add_argument("--raw-hosts", action="store_true", help="keep real hostnames in the JSON report")
    p.add_argument("--no-self-check", action="store_true")

    p = sub.add_parser("cost", help="spam cost calculator")
    p.add_argument("--employees", type=int, required=True)
    p.add_argument("--workdays", type=int, required=True)
    p.add_argument("--wage", required=True, help="average hourly wage")
    p.add_argument("--spam-per-day", required=True)
    p.add_argument("--seconds-per-spam", required=True)
    p.add_argument("--hours-per-day", default="8")
    p.add_argument("--locale", choices=["en", "eu"], default="en")

    p = sub.add_parser("dread", help="DREAD risk score, or rank a threat list")
    for flag in DREAD_FLAGS:
        p.add_argument(f"--{flag}", type=int)
    p.add_argument("--threats", type=Path, help="JSON list of threat records to rank")
    return parser


def _emit(args, doc, text: str) -> None:
    if args.json_output:
        print(json.dumps(doc, indent=2))
    else:
        sys.stdout.write(text)


def cmd_serve(args) -> int:
    if args.mode == Mode.AUTH_REQUIRED.value and args.users is None:
        raise UsageError("--mode auth needs --users")
    if not args.spool.is_dir():
        raise UsageError(f"spool directory does not exist: {args.spool}")
    credentials = CredentialStore.load(args.users) if args.users else CredentialStore()
    policy = Policy(
        Mode(args.mode),
        server_hostname=args.hostname,
        banner_tag=args.banner,
        command_timeout=args.timeout,
    )

    def stop(signum, frame):
        raise KeyboardInterrupt

    signal.signal(signal.SIGTERM, stop)
    if args.json_output:
        print(json.dumps({"listening": f"{args.bind}:{args.port}", "mode": args.mode}), flush=True)
    serve(policy, credentials, args.spool, (args.bind, args.port), max_connections=args.max_connections)
    return 0


def cmd_adduser(args) -> int:
    store = CredentialStore.load(args.users) if args.users.exists() else CredentialStore()
    if args.name in store:
        raise UsageError(f"user {args.name!r} already exists")
    if args.password_stdin:
        password = sys.stdin.readline().rstrip("\r\n")
    else:
        password = getpass.getpass(f"Password for {args.name}: ")
        if getpass.getpass("Repeat password: ") != password:
            raise UsageError("passwords do not match")
    if not password:
        raise UsageError("empty password")
    store.add(args.name, password)
    store.save(args.users)
    _emit(args, {"user": args.name, "users_file": str(args.users)}, f"added {args.name} to {args.users}\n")
    return 0


def cmd_audit(args) -> int:
    if args.send and not args.ack_send:
        raise UsageError("--send also requires --i-understand-this-sends-mail")
    if not args.no_self_check and not self_check():
        print("self-check against the built-in server failed; not probing", file=sys.stderr)
        return 2
    results = []
    for host in args.host:
        spec = ProbeSpec(
            host,
            args.spoofed_from,
            args.rcpt_to,
            port=args.port,
            ehlo_name=args.ehlo_name,
            send_message=args.send,
            timeout=args.timeout,
        )
        res = probe(spec)
        logger.info("%s: %s", res.target, res.verdict.value)
        results.append((args.category, res))
    report = render_report(results, anonymize=not args.raw_hosts)
    if args.json_path:
        args.json_path.write_text(report.to_json() + "\n", encoding="utf-8")
    _emit(args, report.document, report.text)
    return exit_code(r for _, r in results)


def cmd_cost(args) -> int:
    inputs = CostInputs(
        args.employees,
        args.workdays,
        args.wage,
        args.spam_per_day,
        args.seconds_per_spam,
        args.hours_per_day,
    )
    report = compute(inputs)
    _emit(args, report_json(report, args.locale), render_cost_table(report, "text", args.locale))
    return 0


def cmd_dread(args) -> int:
    given = {f: getattr(args, f) for f in DREAD_FLAGS if getattr(args, f) is not None}
    if args.threats is not None:
        if given:
            raise UsageError("--threats cannot be combined with attribute flags")
        ranked = rank(load_threats(args.threats))
        text = "".join(f"{format_risk(t.risk):>5}  {t.name}\n" for t in ranked)
        _emit(args, [t.to_json() for t in ranked], text)
        return 0
    if len(given) != len(DREAD_FLAGS):
        missing = ", ".join(f"--{f}" for f in DREAD_FLAGS if f not in given)
        raise UsageError(f"missing {missing} (or use --threats FILE)")
    score = DreadScore(*(given[f] for f in DREAD_FLAGS))
    value = risk(score)
    doc = {"score": dict(zip(DREAD_FLAGS, score.values())), "risk": format_risk(value), "risk_exact": str(value)}
    _emit(args, doc, format_risk(value) + "\n")
    return 0


COMMANDS = {
    "serve": cmd_serve,
    "adduser": cmd_adduser,
    "audit": cmd_audit,
    "cost": cmd_cost,
    "dread": cmd_dread,
}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(asctime)s %(levelname)s %(name)s: %(message)s",
    )
    try:
        return COMMANDS[args.command](args)
    except UsageError as e:
        parser.print_usage(sys.stderr)
        print(f"{parser.prog} {args.command}: error: {e}", file=sys.stderr)
        return 2
    except (InvalidInput, OutOfRange, ValueError, BindError, SpoolIoError, OSError) as e:
        print(f"{parser.prog} {args.command}: {e}", file=sys.stderr)
        return 2
