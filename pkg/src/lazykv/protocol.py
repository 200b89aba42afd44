"""Wire framing shared by server and client.

A request is one line ``VERB tok tok ...\\r\\n``. A token of the form ``$<n>``
is a placeholder: its ``n`` raw bytes follow the line, in order, each
terminated by ``\\r\\n``. Any other token is taken literally, so simple
commands can be typed by hand (``GET order:1``).

Replies are ``+text``, ``-CODE message``, ``:integer``, ``$<n>`` followed by
n bytes (``$-1`` for nil), or ``*<n>`` followed by n replies.
"""

from __future__ import annotations

from dataclasses import dataclass

from .errors import ProtocolError, ReplyError

MAX_LINE = 64 * 1024
MAX_BULK = 64 * 1024 * 1024
CRLF = b"\r\n"


@dataclass(frozen=True)
class Status:
    text: str


@dataclass(frozen=True)
class Error:
    line: str

    @property
    def code(self) -> str:
        return self.line.split(" ", 1)[0]


OK = Status("OK")


class RequestParser:
    """Incremental request parser; ``feed`` returns every complete command."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._pending: list[bytes] | None = None
        self._bulks: list[int] = []
        self._slots: list[int] = []

    def feed(self, data: bytes) -> list[list[bytes]]:
        buf = self._buf
        buf += data
        out: list[list[bytes]] = []
        pos = 0
        n = len(buf)
        while True:
            if self._pending is None:
                eol = buf.find(CRLF, pos)
                if eol < 0:
                    if n - pos > MAX_LINE:
                        raise ProtocolError("command line too long")
                    break
                if eol - pos > MAX_LINE:
                    raise ProtocolError("command line too long")
                tokens = bytes(buf[pos:eol]).split()
                pos = eol + 2
                if not tokens:
                    continue
                bulks, slots = [], []
                for i, tok in enumerate(tokens):
                    if tok[:1] == b"$" and len(tok) > 1:
                        try:
                            size = int(tok[1:])
                        except ValueError:
                            raise ProtocolError(f"bad bulk length {tok[1:]!r}") from None
                        if not 0 <= size <= MAX_BULK:
                            raise ProtocolError(f"bulk length {size} out of range")
                        bulks.append(size)
                        slots.append(i)
                if not bulks:
                    out.append(tokens)
                    continue
                self._pending, self._bulks, self._slots = tokens, bulks, slots
            while self._bulks:
                size = self._bulks[0]
                if n - pos < size + 2:
                    break
                if buf[pos + size : pos + size + 2] != CRLF:
                    raise ProtocolError("bulk argument not terminated by CRLF")
                self._pending[self._slots[0]] = bytes(buf[pos : pos + size])
                pos += size + 2
                self._bulks.pop(0)
                self._slots.pop(0)
            if self._bulks:
                break
            out.append(self._pending)  # type: ignore[arg-type]
            self._pending = None
        del buf[:pos]
        return out


def _literal_ok(arg: bytes) -> bool:
    return (
        0 < len(arg) <= 256
        and arg[:1] != b"$"
        and not any(c in b" \t\r\n\x0b\x0c" for c in arg)
    )


def encode_command(args: list) -> bytes:
    """Frame one command; arguments that are not plain tokens go out as bulks."""
    tokens: list[bytes] = []
    tail: list[bytes] = []
    for a in args:
        if isinstance(a, str):
            a = a.encode()
        elif isinstance(a, (int, float)) and not isinstance(a, bool):
            a = repr(a).encode()
        if _literal_ok(a):
            tokens.append(a)
        else:
            tokens.append(b"$%d" % len(a))
            tail.append(a + CRLF)
    return b" ".join(tokens) + CRLF + b"".join(tail)


def encode_reply(value) -> bytes:
    if value is None:
        return b"$-1\r\n"
    if isinstance(value, Status):
        return b"+" + value.text.encode() + CRLF
    if isinstance(value, Error):
        return b"-" + value.line.replace("\r", " ").replace("\n", " ").encode() + CRLF
    if isinstance(value, bool):
        return b":1\r\n" if value else b":0\r\n"
    if isinstance(value, int):
        return b":%d\r\n" % value
    if isinstance(value, float):
        value = repr(value).encode()
    if isinstance(value, (bytes, bytearray)):
        return b"$%d\r\n" % len(value) + bytes(value) + CRLF
    if isinstance(value, (list, tuple)):
        return b"*%d\r\n" % len(value) + b"".join(encode_reply(v) for v in value)
    raise TypeError(f"cannot encode reply {value!r}")


class ReplyParser:
    """Incremental reply parser. Errors come back as ``Error`` objects."""

    def __init__(self) -> None:
        self._buf = bytearray()
        self._pos = 0

    def feed(self, data: bytes) -> None:
        self._buf += data

    def _one(self, pos: int):
        buf = self._buf
        eol = buf.find(CRLF, pos)
        if eol < 0:
            return None, pos
        line = bytes(buf[pos + 1 : eol])
        kind = buf[pos : pos + 1]
        nxt = eol + 2
        if kind == b"+":
            return Status(line.decode("utf-8", "replace")), nxt
        if kind == b"-":
            return Error(line.decode("utf-8", "replace")), nxt
        if kind == b":":
            return int(line), nxt
        if kind == b"$":
            size = int(line)
            if size < 0:
                return _NIL, nxt
            if len(buf) < nxt + size + 2:
                return None, pos
            return bytes(buf[nxt : nxt + size]), nxt + size + 2
        if kind == b"*":
            items = []
            p = nxt
            for _ in range(int(line)):
                item, p2 = self._one(p)
                if item is None:
                    return None, pos
                items.append(None if item is _NIL else item)
                p = p2
            return items, p
        raise ProtocolError(f"bad reply type {bytes(kind)!r}")

    def next(self):
        """Return the next complete reply, or ``NOTHING`` if more bytes are needed."""
        if self._pos >= len(self._buf):
            return NOTHING
        item, pos = self._one(self._pos)
        if item is None:
            return NOTHING
        self._pos = pos
        if self._pos > 65536:
            del self._buf[: self._pos]
            self._pos = 0
        return None if item is _NIL else item


_NIL = object()
NOTHING = object()


def unwrap(reply):
    """Raise ReplyError for an error reply; turn ``Status`` into its text."""
    if isinstance(reply, Error):
        raise ReplyError(reply.line)
    if isinstance(reply, Status):
        return reply.text
    return reply
