"""Command-line entry point: ``lazykv server | cli | bench``."""

from __future__ import annotations

import argparse
import asyncio
import logging
import shlex
import sys

from .client import Client, format_reply
from .errors import Disconnected, LazyKVError
from .server import ServerConfig, serve


def _server_config(args) -> ServerConfig:
    cfg = ServerConfig.from_file(args.config) if args.config else ServerConfig()
    for name in ("host", "port", "data_dir", "flush_every", "admin_token"):
        value = getattr(args, name)
        if value is not None:
            setattr(cfg, name, value)
    for name in ("fsync", "sentinel", "bypass", "track_edges"):
        if getattr(args, name):
            setattr(cfg, name, True)
    return cfg


def cmd_server(args) -> int:
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(name)s %(message)s")
    cfg = _server_config(args)

    def ready(addr):
        # machine-readable line for scripts that start the server on port 0
        print(f"listening {addr[0]} {addr[1]}", flush=True)

    try:
        asyncio.run(serve(cfg, ready))
    except OSError as exc:
        print(f"lazykv: cannot start server: {exc}", file=sys.stderr)
        return 1
    except LazyKVError as exc:
        print(f"lazykv: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        pass
    return 0


def _split_line(line: str) -> list[bytes]:
    words = shlex.split(line)
    out = []
    for w in words:
        if w.startswith("@") and len(w) > 1:
            with open(w[1:], "rb") as f:
                out.append(f.read())
        else:
            out.append(w.encode())
    return out


def cmd_cli(args) -> int:
    prefixes = [(p, v) for p, v in args.declare]
    try:
        client = Client(args.host, args.port, prefixes=prefixes, auth=args.auth)
    except (OSError, LazyKVError) as exc:
        print(f"lazykv: {exc}", file=sys.stderr)
        return 1
    try:
        if args.command:
            return 0 if _run_line(client, shlex.join(args.command)) else 1
        if not sys.stdin.isatty():
            for line in sys.stdin:
                if not _run_line(client, line):
                    break
            return 0
        while True:
            try:
                line = input(f"{args.host}:{args.port}> ")
            except EOFError:
                return 0
            if not _run_line(client, line):
                return 0
    finally:
        client.close()


def _run_line(client: Client, line: str) -> bool:
    line = line.strip()
    if not line or line.startswith("#"):
        return True
    if line.lower() in ("quit", "exit"):
        return False
    try:
        parts = _split_line(line)
    except (ValueError, OSError) as exc:
        print(f"(error) {exc}")
        return True
    try:
        print(format_reply(client.raw(*parts)))
    except Disconnected as exc:
        print(f"(disconnected) {exc}")
        return False
    return True


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="lazykv", description=__doc__)
    sub = p.add_subparsers(dest="cmd", required=True)

    s = sub.add_parser("server", help="run the key-value server")
    s.add_argument("--config", help="JSON config file")
    s.add_argument("--host")
    s.add_argument("--port", type=int)
    s.add_argument("--data-dir")
    s.add_argument("--flush-every", type=int)
    s.add_argument("--fsync", action="store_true", help="fsync data records too")
    s.add_argument("--sentinel", action="store_true", help="cache known-absent keys")
    s.add_argument("--bypass", action="store_true", help="disable versioning (baseline)")
    s.add_argument("--track-edges", action="store_true", help="count per-key transforms")
    s.add_argument("--admin-token")
    s.set_defaults(fn=cmd_server)

    c = sub.add_parser("cli", help="send commands to a server")
    c.add_argument("--host", default="127.0.0.1")
    c.add_argument("--port", type=int, default=7379)
    c.add_argument("--auth", help="admin token")
    c.add_argument("--declare", nargs=2, action="append", default=[], metavar=("PREFIX", "VERSION"),
                   help="declare a prefix version at HELLO (repeatable)")
    c.add_argument("command", nargs=argparse.REMAINDER, help="one command to run")
    c.set_defaults(fn=cmd_cli)

    from .bench.harness import add_bench_arguments

    b = sub.add_parser("bench", help="run a workload against a server")
    add_bench_arguments(b)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
