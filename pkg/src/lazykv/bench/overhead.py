"""Steady-state cost of the versioning layer: the same uniform workload
against a normal server and one started with ``--bypass``.

Every value is the same 10 bytes, so the length of each reply is known in
advance and the client never has to parse.
"""

from __future__ import annotations

import random
import selectors
import socket
import time
from dataclasses import dataclass

from ..protocol import encode_command
from .procs import ServerProcess
from .stats import median, siqr

VALUE = b"v" * 10
PREFIX = "bench"


@dataclass
class OverheadResult:
    versioned_s: list[float]
    bypass_s: list[float]
    ops: int

    @property
    def overheads(self) -> list[float]:
        return [v / b - 1.0 for v, b in zip(self.versioned_s, self.bypass_s)]

    @property
    def median_overhead(self) -> float:
        return median(self.overheads)

    def summary(self) -> str:
        ov = self.overheads
        rate_v = self.ops / median(self.versioned_s)
        rate_b = self.ops / median(self.bypass_s)
        return (
            f"trials={len(ov)} ops={self.ops} versioned_qps={rate_v:.0f} "
            f"bypass_qps={rate_b:.0f} median={self.median_overhead * 100:.2f}% "
            f"siqr={siqr(ov) * 100:.2f}%"
        )


def _requests(keys: int, count: int, get_ratio: float, seed: int) -> list[tuple[bytes, int]]:
    """A fixed pool of (request, expected reply length) pairs, reused cyclically."""
    rng = random.Random(seed)
    get_len = len(b"$10\r\n" + VALUE + b"\r\n")
    pool = []
    for _ in range(count):
        key = f"{PREFIX}:{rng.randrange(keys)}"
        if rng.random() < get_ratio:
            pool.append((f"GET {key}\r\n".encode(), get_len))
        else:
            pool.append((f"SET {key} ".encode() + VALUE + b"\r\n", len(b"+OK\r\n")))
    return pool


def _populate(client, keys: int, pipeline: int = 500) -> None:
    for start in range(0, keys, pipeline):
        buf = b"".join(
            encode_command(["SET", f"{PREFIX}:{i}", VALUE])
            for i in range(start, min(keys, start + pipeline))
        )
        client.send_raw(buf)
        expected = b"+OK\r\n" * (min(keys, start + pipeline) - start)
        _read_exact(client, expected)


def _read_exact(client, expected: bytes) -> None:
    sock = client.sock
    got = bytearray()
    while len(got) < len(expected):
        chunk = sock.recv(1 << 20)
        if not chunk:
            raise ConnectionError("server closed the connection")
        got += chunk
    if got != expected:
        raise AssertionError("unexpected replies from server")


def _run(clients, pool, ops: int, depth: int) -> float:
    """Drive ``ops`` commands across all connections, ``depth`` in flight on each."""
    sel = selectors.DefaultSelector()
    need: dict[socket.socket, list[int]] = {}
    sent = done = j = 0

    def issue(sock):
        nonlocal sent, j
        chunk = [pool[(j + x) % len(pool)] for x in range(depth)]
        j += depth
        sent += depth
        need[sock] = [sum(n for _, n in chunk), 0]
        sock.sendall(b"".join(req for req, _ in chunk))

    t0 = time.perf_counter()
    for c in clients:
        sel.register(c.sock, selectors.EVENT_READ)
        issue(c.sock)
    while done < ops:
        for key, _ in sel.select():
            sock = key.fileobj
            data = sock.recv(1 << 16)
            if not data:
                raise ConnectionError("server closed the connection")
            st = need[sock]
            st[1] += len(data)
            if st[1] >= st[0]:
                done += depth
                if sent < ops:
                    issue(sock)
    elapsed = time.perf_counter() - t0
    sel.close()
    return elapsed


def measure_overhead(
    keys: int = 100_000,
    ops: int = 1_000_000,
    trials: int = 11,
    connections: int = 50,
    pipeline: int = 1,
    get_ratio: float = 0.5,
    seed: int = 7,
) -> OverheadResult:
    """Trials alternate between the two servers so drift hits both alike.

    Reply lengths are checked, not contents; the populate step already
    verified that both servers answer the same way.
    """
    pool = _requests(keys, 4096, get_ratio, seed)
    with ServerProcess() as versioned, ServerProcess("--bypass") as bypass:
        conns = {}
        for name, proc in (("v", versioned), ("b", bypass)):
            loader = proc.client(prefixes={PREFIX: 0})
            _populate(loader, keys)
            loader.close()
            conns[name] = [proc.client(prefixes={PREFIX: 0}) for _ in range(connections)]
        warm = max(1000, ops // 10)
        _run(conns["v"], pool, warm, pipeline)
        _run(conns["b"], pool, warm, pipeline)
        tv, tb = [], []
        for i in range(trials):
            order = ("b", "v") if i % 2 else ("v", "b")
            for name in order:
                t = _run(conns[name], pool, ops, pipeline)
                (tv if name == "v" else tb).append(t)
        for cs in conns.values():
            for c in cs:
                c.close()
    return OverheadResult(tv, tb, ops)
