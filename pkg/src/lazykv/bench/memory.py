"""Resident memory of a populated server with versioning on and bypassed.

Keys are spread evenly over several declared prefixes and every value is
the same 10 bytes. RSS is read from outside the server process after the
population finishes, once with the versioning layer and once without.
"""

from __future__ import annotations

from dataclasses import dataclass

from ..protocol import encode_command
from .overhead import VALUE, _read_exact
from .procs import ServerProcess


@dataclass
class MemoryResult:
    keys: int
    prefixes: int
    versioned_rss: int
    bypass_rss: int
    versioned_idle_rss: int
    bypass_idle_rss: int

    @property
    def overhead(self) -> float:
        """Relative RSS growth from population, versioned over bypassed."""
        v = self.versioned_rss - self.versioned_idle_rss
        b = self.bypass_rss - self.bypass_idle_rss
        return v / b - 1.0

    @property
    def total_overhead(self) -> float:
        """Relative whole-process RSS, versioned over bypassed."""
        return self.versioned_rss / self.bypass_rss - 1.0

    def summary(self) -> str:
        mb = 1 << 20
        return (
            f"keys={self.keys} prefixes={self.prefixes} "
            f"versioned_rss={self.versioned_rss / mb:.1f}MB bypass_rss={self.bypass_rss / mb:.1f}MB "
            f"data_overhead={self.overhead * 100:.2f}% total_overhead={self.total_overhead * 100:.2f}%"
        )


def prefix_names(n: int) -> list[str]:
    return [f"mem{i}" for i in range(n)]


def _fill(proc: ServerProcess, keys: int, prefixes: list[str], batch: int = 1000) -> None:
    with proc.client(prefixes={p: 0 for p in prefixes}) as c:
        for start in range(0, keys, batch):
            stop = min(keys, start + batch)
            c.send_raw(b"".join(
                encode_command(["SET", f"{prefixes[i % len(prefixes)]}:{i}", VALUE])
                for i in range(start, stop)
            ))
            _read_exact(c, b"+OK\r\n" * (stop - start))


def measure_memory(keys: int = 1_000_000, prefixes: int = 5) -> MemoryResult:
    names = prefix_names(prefixes)
    rss = {}
    for flags in ((), ("--bypass",)):
        with ServerProcess(*flags) as proc:
            with proc.client(prefixes={p: 0 for p in names}):
                pass
            idle = proc.rss_bytes()
            _fill(proc, keys, names)
            rss[flags] = (proc.rss_bytes(), idle)
    (v, vi), (b, bi) = rss[()], rss[("--bypass",)]
    return MemoryResult(keys, prefixes, v, b, vi, bi)
