"""asyncio network front end.

Every connection's commands are executed inside ``data_received`` on one
event loop, so a command and the migration it triggers never interleave with
another command. A connection must send ``HELLO`` first:

    HELLO [AUTH <token>] [<prefix> <version>]...

Stale sessions are sent ``-GOAWAY`` and closed right after the installing
command's reply is written, before any of their queued commands run.
"""

from __future__ import annotations

import asyncio
import json
import logging
import math
import threading
from dataclasses import asdict, dataclass, fields

from .core import Str
from .engine import Engine
from .errors import (
    KeyFormatError,
    LazyKVError,
    ParseError,
    ProtocolError,
    RetiredPrefixError,
    TransformFailed,
    UpdateRejected,
    VersionError,
    WrongTypeError,
)
from .persistence import Persistence
from .protocol import OK, Error, RequestParser, Status, encode_reply
from .specdoc import parse_spec_document

log = logging.getLogger("lazykv.server")


@dataclass
class ServerConfig:
    host: str = "127.0.0.1"
    port: int = 7379
    data_dir: str | None = None
    flush_every: int = 1
    fsync: bool = False
    sentinel: bool = False
    admin_token: str | None = None
    bypass: bool = False
    track_edges: bool = False

    @classmethod
    def from_file(cls, path: str) -> "ServerConfig":
        with open(path, encoding="utf-8") as f:
            raw = json.load(f)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {', '.join(sorted(unknown))}")
        return cls(**raw)

    def to_dict(self) -> dict:
        return asdict(self)


class _Shutdown(Exception):
    pass


class Session(asyncio.Protocol):
    def __init__(self, server: "Server"):
        self.server = server
        self.parser = RequestParser()
        self.transport: asyncio.Transport | None = None
        self.admitted = False
        self.admin = False
        self.closed = False

    def __repr__(self) -> str:
        peer = self.transport.get_extra_info("peername") if self.transport else None
        return f"<Session {peer}>"

    def connection_made(self, transport) -> None:
        self.transport = transport
        self.server.sessions.add(self)

    def connection_lost(self, exc) -> None:
        self.closed = True
        self.server.sessions.discard(self)
        self.server.engine.disconnect(self)

    def close(self, goodbye: bytes | None = None) -> None:
        if self.closed:
            return
        self.closed = True
        self.server.engine.disconnect(self)
        if self.transport is not None:
            if goodbye:
                self.transport.write(goodbye)
            self.transport.close()

    def data_received(self, data: bytes) -> None:
        if self.closed:
            return
        try:
            commands = self.parser.feed(data)
        except ProtocolError as exc:
            self.close(encode_reply(Error(f"PROTOCOL {exc}")))
            return
        out = []
        for cmd in commands:
            if self.closed:
                break
            try:
                reply, after = self.server.execute(self, cmd)
            except _Shutdown:
                self.transport.write(b"".join(out) + encode_reply(OK))  # type: ignore[union-attr]
                self.server.request_shutdown()
                return
            out.append(encode_reply(reply))
            if after is not None:
                self.transport.write(b"".join(out))  # type: ignore[union-attr]
                out = []
                after()
        if out and not self.closed:
            self.transport.write(b"".join(out))  # type: ignore[union-attr]


def _int(tok: bytes) -> int:
    try:
        return int(tok)
    except ValueError:
        raise ValueError(f"not an integer: {tok!r}") from None


def _score(tok: bytes) -> float:
    try:
        s = float(tok)
    except ValueError:
        raise ValueError(f"not a number: {tok!r}") from None
    if not math.isfinite(s):
        raise ValueError("score must be finite")
    return s


_ARITY = {
    # verb: (min args, max args or None); args exclude the verb
    b"PING": (0, 1), b"GET": (1, 1), b"SET": (2, 3), b"DEL": (1, 1), b"EXISTS": (1, 1),
    b"LPUSH": (2, None), b"LPOP": (1, 1), b"LRANGE": (3, 3), b"SADD": (2, None),
    b"SPOP": (1, 1), b"SMEMBERS": (1, 1), b"HSET": (3, None), b"HGET": (2, 2),
    b"HGETALL": (1, 1), b"ZADD": (3, None), b"ZSCORE": (2, 2), b"UPGRADE": (1, 1),
    b"MIGRATE": (0, 1), b"STATS": (0, 0), b"SNAPSHOT": (0, 0), b"SHUTDOWN": (0, 0),
}
_ADMIN = {b"UPGRADE", b"MIGRATE", b"STATS", b"SNAPSHOT", b"SHUTDOWN"}


class Server:
    def __init__(self, config: ServerConfig | None = None, engine: Engine | None = None):
        self.config = config or ServerConfig()
        self.engine = engine or Engine(
            sentinel=self.config.sentinel,
            bypass=self.config.bypass,
            track_edges=self.config.track_edges,
        )
        self.persistence: Persistence | None = None
        if self.config.data_dir and engine is None:
            self.persistence = Persistence(
                self.config.data_dir, flush_every=self.config.flush_every, fsync=self.config.fsync
            ).recover(self.engine)
            if self.persistence.degraded:
                log.warning("native transformers missing: %s", ", ".join(sorted(self.persistence.degraded)))
        self.sessions: set[Session] = set()
        self._server: asyncio.base_events.Server | None = None
        self._stopped: asyncio.Event | None = None
        self.loop: asyncio.AbstractEventLoop | None = None

    # -- lifecycle -------------------------------------------------------

    async def start(self) -> tuple[str, int]:
        self.loop = asyncio.get_running_loop()
        self._stopped = asyncio.Event()
        self._server = await self.loop.create_server(
            lambda: Session(self), self.config.host, self.config.port
        )
        host, port = self._server.sockets[0].getsockname()[:2]
        self.address = (host, port)
        log.info("listening on %s:%d", host, port)
        return host, port

    async def serve_until_shutdown(self) -> None:
        assert self._stopped is not None
        await self._stopped.wait()
        await self.stop()

    async def stop(self) -> None:
        if self._server is not None:
            self._server.close()
            for s in list(self.sessions):
                s.close()
            await self._server.wait_closed()
            self._server = None
        if self.persistence is not None:
            self.persistence.close()
        if self._stopped is not None:
            self._stopped.set()

    def request_shutdown(self) -> None:
        assert self._stopped is not None
        self._stopped.set()

    # -- dispatch --------------------------------------------------------

    def execute(self, session: Session, cmd: list[bytes]):
        """Run one command; returns (reply, action to run after the reply is sent)."""
        verb = cmd[0].upper()
        args = cmd[1:]
        if verb == b"HELLO":
            return self._hello(session, args)
        if not session.admitted:
            return Error("NEED_HELLO send HELLO first"), None
        arity = _ARITY.get(verb)
        if arity is None:
            return Error(f"ERR unknown command {verb.decode('ascii', 'replace')!r}"), None
        lo, hi = arity
        if len(args) < lo or (hi is not None and len(args) > hi):
            return Error(f"ERR wrong number of arguments for {verb.decode()}"), None
        if verb in _ADMIN and not session.admin:
            return Error("NOAUTH admin command needs HELLO AUTH <token>"), None
        try:
            if verb == b"UPGRADE":
                return self._upgrade(session, args[0])
            return self._data(verb, args), None
        except _Shutdown:
            raise
        except WrongTypeError as exc:
            return Error(f"WRONGTYPE {exc}"), None
        except RetiredPrefixError as exc:
            return Error(f"RETIRED {exc}"), None
        except TransformFailed as exc:
            return Error(f"TRANSFORM {exc}"), None
        except (KeyFormatError, ValueError, VersionError, LazyKVError) as exc:
            return Error(f"ERR {exc}"), None

    def _hello(self, session: Session, args: list[bytes]):
        if session.admitted:
            return Error("ERR already said HELLO"), None
        admin = self.config.admin_token is None
        if len(args) >= 2 and args[0].upper() == b"AUTH":
            token = args[1].decode("utf-8", "replace")
            if self.config.admin_token is not None and token != self.config.admin_token:
                return Error("ERR bad admin token"), None
            admin = True
            args = args[2:]
        if len(args) % 2:
            return Error("ERR HELLO takes prefix version pairs"), None
        pairs = []
        for p, v in zip(args[::2], args[1::2]):
            if not v.isdigit():
                return Error(f"ERR version must be a number, got {v!r}"), None
            pairs.append((p, int(v)))
        try:
            mismatch = self.engine.hello(session, pairs)
        except UpdateRejected as exc:
            return Error(f"ERR {exc}"), None
        if mismatch is not None:
            prefix, current = mismatch
            return Error(f"MISMATCH {prefix.decode('utf-8', 'replace')} {current}"), session.close
        session.admitted = True
        session.admin = admin
        return OK, None

    def _upgrade(self, session: Session, body: bytes):
        try:
            spec, programs = parse_spec_document(body)
        except ParseError as exc:
            return Error(f"ERR parse {exc}"), None
        try:
            stale = self.engine.install_update(spec, programs)
        except (UpdateRejected, ParseError) as exc:
            return Error(f"ERR {exc}"), None

        def drop() -> None:
            for s in stale:
                if isinstance(s, Session):
                    s.close(b"-GOAWAY upgrade required\r\n")

        return Status(f"OK DISCONNECTED {len(stale)}"), drop

    def _data(self, verb: bytes, a: list[bytes]):
        e = self.engine
        if verb == b"PING":
            return a[0] if a else Status("PONG")
        if verb == b"GET":
            p = e.get(a[0])
            if p is None:
                return None
            if not isinstance(p, Str):
                raise WrongTypeError(a[0], "string", p.KIND)
            return p.value
        if verb == b"SET":
            flag = a[2].decode("ascii", "replace") if len(a) == 3 else None
            return OK if e.set(a[0], a[1], flag) else None
        if verb == b"DEL":
            return int(e.delete(a[0]))
        if verb == b"EXISTS":
            return int(e.exists(a[0]))
        if verb == b"LPUSH":
            return e.lpush(a[0], *a[1:])
        if verb == b"LPOP":
            return e.lpop(a[0])
        if verb == b"LRANGE":
            return e.lrange(a[0], _int(a[1]), _int(a[2]))
        if verb == b"SADD":
            return e.sadd(a[0], *a[1:])
        if verb == b"SPOP":
            return e.spop(a[0])
        if verb == b"SMEMBERS":
            return e.smembers(a[0])
        if verb == b"HSET":
            return e.hset(a[0], *a[1:])
        if verb == b"HGET":
            return e.hget(a[0], a[1])
        if verb == b"HGETALL":
            return e.hgetall(a[0])
        if verb == b"ZADD":
            if len(a) % 2 == 0:
                raise ValueError("ZADD takes score member pairs")
            pairs = []
            for s, m in zip(a[1::2], a[2::2]):
                pairs += [_score(s), m]
            return e.zadd(a[0], *pairs)
        if verb == b"ZSCORE":
            return e.zscore(a[0], a[1])
        if verb == b"MIGRATE":
            try:
                return e.eager_migrate(a[0]) if a else e.eager_migrate_all()
            except TransformFailed as exc:
                return Error(f"TRANSFORM {exc} (migrated {getattr(exc, 'migrated', 0)})")
        if verb == b"STATS":
            return [row.encode() for row in e.stats().rows()]
        if verb == b"SNAPSHOT":
            if self.persistence is None:
                return Error("ERR no data directory configured")
            self.persistence.snapshot(e)
            return OK
        if verb == b"SHUTDOWN":
            raise _Shutdown
        raise AssertionError(verb)


async def serve(config: ServerConfig, ready=None) -> None:
    server = Server(config)
    addr = await server.start()
    if ready is not None:
        ready(addr)
    await server.serve_until_shutdown()


class ServerThread:
    """Runs a server on a private event loop in a daemon thread (tests, benches)."""

    def __init__(self, config: ServerConfig | None = None, engine: Engine | None = None):
        cfg = config or ServerConfig(port=0)
        self.server = Server(cfg, engine)
        self._ready = threading.Event()
        self._thread = threading.Thread(target=self._run, daemon=True)
        self.address: tuple[str, int] | None = None
        self._error: BaseException | None = None

    def _run(self) -> None:
        async def main():
            try:
                self.address = await self.server.start()
            except BaseException as exc:
                self._error = exc
                raise
            finally:
                self._ready.set()
            await self.server.serve_until_shutdown()

        try:
            asyncio.run(main())
        except BaseException as exc:  # reported through start()
            self._error = self._error or exc

    def start(self) -> "ServerThread":
        self._thread.start()
        self._ready.wait(10)
        if self._error is not None:
            raise self._error
        return self

    def stop(self) -> None:
        loop = self.server.loop
        if loop is not None and self._thread.is_alive():
            loop.call_soon_threadsafe(self.server.request_shutdown)
        self._thread.join(10)

    def call(self, fn, *args):
        """Run ``fn`` on the server loop and wait for its result."""
        assert self.server.loop is not None
        fut = asyncio.run_coroutine_threadsafe(_call(fn, *args), self.server.loop)
        return fut.result(30)

    def __enter__(self) -> "ServerThread":
        return self.start()

    def __exit__(self, *exc) -> None:
        self.stop()


async def _call(fn, *args):
    return fn(*args)
