"""Blocking client for the wire protocol."""

from __future__ import annotations

import socket

from .errors import Disconnected, ReplyError
from .protocol import NOTHING, Error, ReplyParser, Status, encode_command, unwrap


class Client:
    def __init__(
        self,
        host: str = "127.0.0.1",
        port: int = 7379,
        *,
        prefixes: dict | list | None = None,
        auth: str | None = None,
        timeout: float | None = 30.0,
        hello: bool = True,
    ):
        self.address = (host, port)
        self.sock = socket.create_connection(self.address, timeout=timeout)
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        self.parser = ReplyParser()
        self.closed = False
        if hello:
            self.hello(prefixes, auth=auth)

    # -- plumbing --------------------------------------------------------

    def _recv_reply(self):
        while True:
            reply = self.parser.next()
            if reply is not NOTHING:
                if isinstance(reply, Error) and reply.code == "GOAWAY":
                    self.close()
                    raise Disconnected(reply.line)
                return reply
            try:
                chunk = self.sock.recv(1 << 16)
            except (ConnectionResetError, BrokenPipeError) as exc:
                self.close()
                raise Disconnected(str(exc)) from None
            if not chunk:
                self.close()
                raise Disconnected("server closed the connection")
            self.parser.feed(chunk)

    def send_raw(self, data: bytes) -> None:
        try:
            self.sock.sendall(data)
        except (ConnectionResetError, BrokenPipeError) as exc:
            self.close()
            raise Disconnected(str(exc)) from None

    def raw(self, *args):
        """Send one command and return the reply undecoded (errors as ``Error``)."""
        self.send_raw(encode_command(list(args)))
        return self._recv_reply()

    def execute(self, *args):
        return unwrap(self.raw(*args))

    def pipeline(self, commands: list[list]) -> list:
        """Send every command, then read one reply each (errors stay as ``Error``)."""
        self.send_raw(b"".join(encode_command(list(c)) for c in commands))
        return [self._recv_reply() for _ in commands]

    def read_replies(self, n: int) -> list:
        return [self._recv_reply() for _ in range(n)]

    def close(self) -> None:
        if not self.closed:
            self.closed = True
            try:
                self.sock.close()
            except OSError:
                pass

    def __enter__(self) -> "Client":
        return self

    def __exit__(self, *exc) -> None:
        self.close()

    # -- commands --------------------------------------------------------

    def hello(self, prefixes=None, *, auth: str | None = None) -> str:
        args: list = ["HELLO"]
        if auth is not None:
            args += ["AUTH", auth]
        items = prefixes.items() if isinstance(prefixes, dict) else (prefixes or [])
        for p, v in items:
            args += [p, str(v)]
        return self.execute(*args)

    def ping(self):
        return self.execute("PING")

    def get(self, key):
        return self.execute("GET", key)

    def set(self, key, value, flag: str | None = None) -> bool:
        args = ["SET", key, value] + ([flag] if flag else [])
        return self.execute(*args) == "OK"

    def delete(self, key) -> int:
        return self.execute("DEL", key)

    def exists(self, key) -> int:
        return self.execute("EXISTS", key)

    def upgrade(self, spec_text: str | bytes) -> int:
        """Install an update; returns the number of sessions disconnected."""
        if isinstance(spec_text, str):
            spec_text = spec_text.encode()
        reply = self.execute("UPGRADE", spec_text)
        return int(reply.rsplit(" ", 1)[1])

    def migrate(self, prefix=None) -> int:
        return self.execute("MIGRATE", prefix) if prefix is not None else self.execute("MIGRATE")

    def stats(self) -> dict:
        rows = self.execute("STATS")
        out: dict = {"timeline": {}}
        for row in rows:
            parts = row.decode().split()
            if parts[0] == "timeline":
                out["timeline"][int(parts[1])] = int(parts[2])
            else:
                out[parts[0]] = int(parts[1])
        return out


def format_reply(reply, indent: str = "") -> str:
    """Human-readable rendering used by the interactive CLI."""
    if reply is None:
        return indent + "(nil)"
    if isinstance(reply, Status):
        return indent + reply.text
    if isinstance(reply, Error):
        return indent + "(error) " + reply.line
    if isinstance(reply, int):
        return indent + f"(integer) {reply}"
    if isinstance(reply, bytes):
        return indent + repr(reply.decode("utf-8", "backslashreplace"))
    if isinstance(reply, list):
        if not reply:
            return indent + "(empty array)"
        return "\n".join(
            f"{indent}{i}) " + format_reply(r).lstrip() for i, r in enumerate(reply, 1)
        )
    return indent + repr(reply)


__all__ = ["Client", "Disconnected", "ReplyError", "format_reply"]
