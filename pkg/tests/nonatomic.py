"""A deliberately non-atomic lazy store used to show the GET/SET race.

Its GET migrates a stale key in separate steps (read the old entry, run the
transformer, write the new entry and drop the old one) and yields control
between them, the way a proxy issuing several backend commands would. A SET
from another client that lands between those steps is overwritten by the
migrated old value.
"""

from __future__ import annotations

from typing import Callable, Iterator


class SplitMigrationStore:
    """Plain dict keyed by str with one renamed prefix ``old -> new`` and value function ``fn``."""

    def __init__(self, old: str, new: str, fn: Callable[[bytes], bytes]):
        self.old, self.new, self.fn = old, new, fn
        self.data: dict[str, bytes] = {}

    def _old_name(self, key: str) -> str | None:
        if key.startswith(self.new):
            return self.old + key[len(self.new):]
        return None

    def get_steps(self, key: str, out: list) -> Iterator[str]:
        """GET as a generator; each ``yield`` is a point where another client may run."""
        if key in self.data:
            out.append(self.data[key])
            return
        old = self._old_name(key)
        value = self.data.get(old) if old is not None else None
        yield "read old"
        if value is None:
            out.append(None)
            return
        value = self.fn(value)
        yield "transformed"
        self.data[key] = value
        self.data.pop(old, None)
        out.append(value)

    def set(self, key: str, value: bytes) -> None:
        self.data[key] = value
        old = self._old_name(key)
        if old is not None:
            self.data.pop(old, None)

    def peek(self, key: str) -> bytes | None:
        return self.data.get(key)


class WholeCommandStore:
    """Wraps a store whose GET is one indivisible call in the same step interface."""

    def __init__(self, get: Callable[[str], bytes | None], set_: Callable[[str, bytes], None]):
        self._get, self._set = get, set_

    def get_steps(self, key: str, out: list) -> Iterator[str]:
        out.append(self._get(key))
        yield "done"

    def set(self, key: str, value: bytes) -> None:
        self._set(key, value)

    def peek(self, key: str) -> bytes | None:
        return self._get(key)


def _run(store, key: str, value: bytes, at: int | None):
    """A's GET with B's SET before it (0), after yield ``at``, or after it (None)."""
    out: list = []
    if at == 0:
        store.set(key, value)
    for i, _ in enumerate(store.get_steps(key, out), 1):
        if i == at:
            store.set(key, value)
    if at is None:
        store.set(key, value)
    return out[0], store.peek(key)


def serial_outcomes(make_store, key: str, value: bytes) -> set:
    return {_run(make_store(), key, value, 0), _run(make_store(), key, value, None)}


def interleaved_outcomes(make_store, key: str, value: bytes) -> list:
    """(injection point, A's reply, final value) for B's SET at every yield of A's GET."""
    points = sum(1 for _ in make_store().get_steps(key, []))
    return [(at, *_run(make_store(), key, value, at)) for at in range(1, points + 1)]


def anomalies(make_store, key: str, value: bytes) -> list:
    """Interleavings whose outcome matches neither serial order."""
    ok = serial_outcomes(make_store, key, value)
    return [o for o in interleaved_outcomes(make_store, key, value) if (o[1], o[2]) not in ok]
