"""The interceptor: every data command passes through version checks, backward
key lookup and lazy migration before it touches the raw store.

An entry stored under raw name ``N`` with tag ``t`` belongs to the chain that
owns ``N``; the record in force at ``t`` tells the prefix text it was written
under, hence the *logical* key it represents (``N`` rewritten to the head
text). Reads of a logical key probe its current name first and then each older
text of the chain. A stale entry is renamed and run through the transformers
of every later record, then stored under the logical name with the head's
version, all inside the one command that touched it.

The engine is not thread-safe; ``server`` runs it from a single event loop.
"""

from __future__ import annotations

import time
from collections import Counter
from dataclasses import dataclass, field
from typing import Iterable

from . import core
from .core import Hash, List, Payload, Set, Store, Str, VersionedValue, ZSet, check_key
from .errors import (
    RetiredPrefixError,
    TransformFailed,
    UpdateRejected,
    WrongTypeError,
)
from .registry import Chain, PrefixChange, PrefixRecord, Registry, rewrite, text_matches
from .specdoc import UpdateSpec
from .transform import Program, TransformerRegistry, apply, parse_program

SENTINEL_LIMIT = 1_000_000
_UNTAGGED = bytes(4)


@dataclass
class MigrationStats:
    lazy_migrations: int = 0
    lazy_value_updates: int = 0
    lazy_key_renames: int = 0
    residue_deletes: int = 0
    eager_migrations: int = 0
    sentinel_hits: int = 0
    installs: int = 0
    last_install_us: int = 0
    timeline: dict[int, int] = field(default_factory=dict)
    max_edge_transforms: int = 0

    def rows(self) -> list[str]:
        out = [
            f"{name} {getattr(self, name)}"
            for name in (
                "lazy_migrations",
                "lazy_value_updates",
                "lazy_key_renames",
                "residue_deletes",
                "eager_migrations",
                "sentinel_hits",
                "installs",
                "last_install_us",
                "max_edge_transforms",
            )
        ]
        out += [f"timeline {sec} {n}" for sec, n in sorted(self.timeline.items())]
        return out

    @classmethod
    def from_rows(cls, rows: Iterable[str]) -> "MigrationStats":
        stats = cls()
        for row in rows:
            parts = row.split()
            if parts[0] == "timeline":
                stats.timeline[int(parts[1])] = int(parts[2])
            elif hasattr(stats, parts[0]):
                setattr(stats, parts[0], int(parts[1]))
        return stats


@dataclass
class _Loc:
    head: PrefixRecord | None
    name: bytes | None = None
    entry: VersionedValue | None = None


def _as_payload(value) -> Payload:
    if isinstance(value, (bytes, bytearray)):
        return Str(bytes(value))
    return core.validate_payload(value)


class Engine:
    def __init__(
        self,
        *,
        transformers: TransformerRegistry | None = None,
        journal=None,
        sentinel: bool = False,
        bypass: bool = False,
        track_edges: bool = False,
        clock=time.monotonic,
    ):
        self.registry = Registry()
        self.bypass = bypass
        self.store = Store(
            None if bypass else self.registry.logical_version, versioned=not bypass
        )
        self.transformers = transformers or TransformerRegistry()
        self.journal = journal
        self.sentinel = sentinel
        self._absent: set[bytes] = set()
        self.track_edges = track_edges
        self.edges: Counter = Counter()
        self._stats = MigrationStats()
        self._clock = clock
        self._t0 = clock()
        self._ops: list | None = None

    # -- command bracketing ------------------------------------------------

    def _begin(self) -> None:
        if self.journal is not None:
            self._ops = []
            self.store.journal = self._ops

    def _end(self) -> None:
        if self.journal is not None:
            ops, self._ops = self._ops, None
            self.store.journal = None
            if ops:
                self.journal.append_batch(ops)

    # -- sessions ----------------------------------------------------------

    def hello(self, session, pairs) -> tuple[bytes, int] | None:
        if self.bypass:
            return None
        pairs = [(bytes(p), int(v)) for p, v in pairs]
        before = set(self.registry.by_text) if self.journal is not None else None
        result = self.registry.hello(session, pairs)
        if result is None and before is not None:
            made = sorted({(p, v) for p, v in pairs if p not in before})
            if made:
                self.journal.append_declare(made)
        return result

    def disconnect(self, session) -> None:
        self.registry.drop_session(session)

    # -- locating entries ----------------------------------------------------

    def _head_for(self, key: bytes) -> PrefixRecord | None:
        rec = self.registry.match(key)
        if rec is None:
            return None
        head = rec.chain.head
        if rec.prefix != head.prefix:
            raise RetiredPrefixError(key, rec.prefix, head.prefix)
        return head

    @staticmethod
    def _valid_at(chain: Chain, text: bytes, entry: VersionedValue) -> bool:
        """Whether an entry found under ``text`` was written under that text."""
        if len(chain.records) == 1:
            return True
        return chain.record_for_tag(entry.version).prefix == text

    def _locate(self, key: bytes) -> _Loc:
        """Find the raw entry that logically is ``key``; never mutates."""
        head = self._head_for(key)
        store = self.store
        entry = store.raw_get(key)
        if head is None:
            return _Loc(None, key if entry is not None else None, entry)
        chain = head.chain
        if entry is not None and self._valid_at(chain, head.prefix, entry):
            return _Loc(head, key, entry)
        ancestors = chain.ancestors()
        if len(ancestors) == 1:
            return _Loc(head)
        if self.sentinel and key in self._absent:
            self._stats.sentinel_hits += 1
            return _Loc(head)
        for rec in ancestors[1:]:
            name = rewrite(key, head.prefix, rec.prefix)
            e = store.raw_get(name)
            if e is None:
                continue
            # the old name may sit inside another chain nested in the old text
            owner = self.registry.match(name)
            if owner is not None and owner.chain is chain and self._valid_at(chain, rec.prefix, e):
                return _Loc(head, name, e)
        if self.sentinel:
            if len(self._absent) >= SENTINEL_LIMIT:
                self._absent.clear()
            self._absent.add(key)
        return _Loc(head)

    def lookup_with_fallback(self, key: bytes) -> tuple[bytes, VersionedValue] | None:
        loc = self._locate(check_key(key))
        if loc.entry is None:
            return None
        return loc.name, loc.entry

    # -- migration -----------------------------------------------------------

    def _is_stale(self, chain: Chain, name: bytes, entry: VersionedValue) -> bool:
        head = chain.head
        return entry.version < head.version or (
            len(chain.records) > 1 and chain.record_for_tag(entry.version).prefix != head.prefix
        )

    def _plan_migration(
        self, chain: Chain, name: bytes, entry: VersionedValue
    ) -> tuple[bytes, Payload, list[PrefixRecord]]:
        head = chain.head
        start = chain.record_for_tag(entry.version)
        if text_matches(start.prefix, name):
            logical = rewrite(name, start.prefix, head.prefix)
        else:
            logical = name
        payload = entry.payload
        edges: list[PrefixRecord] = []
        rec = start.next
        while rec is not None:
            edges.append(rec)
            if rec.transformers:
                key_at = rewrite(logical, head.prefix, rec.prefix)
                for tname in rec.transformers:
                    payload = apply(self.transformers.get(tname), key_at, payload)
            rec = rec.next
        return logical, payload, edges

    def _migrate(self, chain: Chain, name: bytes, entry: VersionedValue, *, lazy: bool, depth: int = 0) -> tuple[bytes, VersionedValue, int]:
        """Bring one stale entry current. Returns (logical key, new entry, entries moved)."""
        if depth > 64:
            raise TransformFailed(name, "rename", "eviction chain too deep")
        head = chain.head
        logical, payload, edges = self._plan_migration(chain, name, entry)
        moved = 0
        if logical != name:
            moved += self._evict(chain, logical, lazy=lazy, depth=depth + 1)
            self.store.raw_delete(name)
        if payload is entry.payload and not isinstance(payload, Str):
            payload = core.copy_payload(payload)
        self.store.raw_set(logical, payload, head.version)
        moved += 1
        stats = self._stats
        if lazy:
            stats.lazy_migrations += 1
            if any(r.transformers for r in edges):
                stats.lazy_value_updates += 1
            if logical != name:
                stats.lazy_key_renames += 1
            sec = int(self._clock() - self._t0)
            stats.timeline[sec] = stats.timeline.get(sec, 0) + 1
        else:
            stats.eager_migrations += 1
        if self.track_edges:
            for r in edges:
                self.edges[(logical, r.version)] += 1
        return logical, self.store.raw_get(logical), moved  # type: ignore[return-value]

    def _evict(self, chain: Chain, name: bytes, *, lazy: bool, depth: int) -> int:
        """Move a mis-filed occupant of raw slot ``name`` to its own logical name."""
        occ = self.store.raw_get(name)
        if occ is None or not self._is_stale(chain, name, occ):
            return 0
        if self._valid_at(chain, chain.head.prefix, occ):
            return 0
        return self._migrate(chain, name, occ, lazy=lazy, depth=depth)[2]

    def _current(self, key: bytes) -> tuple[PrefixRecord | None, VersionedValue | None]:
        """Locate ``key`` and migrate it if stale; returns the current entry."""
        loc = self._locate(key)
        if loc.entry is None or loc.head is None:
            return loc.head, loc.entry
        chain = loc.head.chain
        if loc.name == key and loc.entry.version >= loc.head.version:
            return loc.head, loc.entry
        _, entry, _ = self._migrate(chain, loc.name, loc.entry, lazy=True)
        return loc.head, entry

    def _write(self, key: bytes, head: PrefixRecord | None, payload: Payload) -> None:
        if head is not None and len(head.chain.records) > 1:
            self._evict(head.chain, key, lazy=True, depth=0)
        self.store.put(key, payload, 0 if head is None else head.version)

    # -- installing updates --------------------------------------------------

    def install_update(self, spec: UpdateSpec, programs: dict[str, Program | str] | None = None) -> set:
        """Install atomically; returns the sessions to disconnect."""
        if self.bypass:
            raise UpdateRejected("updates are disabled with the interceptor bypassed")
        t_start = time.perf_counter()
        parsed: dict[str, Program] = {}
        for name, prog in (programs or {}).items():
            program = parse_program(prog) if isinstance(prog, (str, bytes)) else prog
            known = self.transformers.programs.get(name)
            if known is not None and known != program:
                raise UpdateRejected(f"transformer {name!r} already installed with another body")
            if name in self.transformers.natives:
                raise UpdateRejected(f"transformer {name!r} clashes with a native transformer")
            parsed[name] = program
        for name in spec.transformer_names():
            if name not in parsed and not self.transformers.knows(name):
                raise UpdateRejected(f"unknown transformer {name!r}")
        self.registry.validate(spec.changes)
        if self.journal is not None:
            try:
                self.journal.append_install(spec, parsed)
            except OSError as exc:
                raise UpdateRejected(f"could not persist update: {exc}") from None
        self.transformers.programs.update(parsed)
        stale = self.registry.advance(spec.changes)
        self._absent.clear()
        self._stats.installs += 1
        self._stats.last_install_us = int((time.perf_counter() - t_start) * 1e6)
        return stale

    def adopt_registry(self, registry: Registry) -> None:
        self.registry = registry
        if not self.bypass:
            self.store._bound = registry.logical_version

    def replay_install(self, spec: UpdateSpec, programs: dict[str, Program]) -> None:
        """Re-apply a persisted install during recovery (no validation of natives)."""
        self.transformers.programs.update(programs)
        self.registry.advance(spec.changes)

    def replay_declare(self, pairs) -> None:
        for text, version in pairs:
            if self.registry.lookup(text) is None:
                self.registry._create_chain(text, version)

    # -- eager migration -----------------------------------------------------

    def eager_migrate(self, prefix: bytes) -> int:
        rec = self.registry.lookup(bytes(prefix))
        if rec is None:
            return 0
        chain = rec.chain
        texts = tuple(chain.texts())
        migrated = 0
        for name in [k for k in self.store.keys() if k.startswith(texts)]:
            owner = self.registry.match(name)
            if owner is None or owner.chain is not chain:
                continue
            entry = self.store.raw_get(name)
            if entry is None or not self._is_stale(chain, name, entry):
                continue
            self._begin()
            try:
                migrated += self._migrate(chain, name, entry, lazy=False)[2]
            except TransformFailed as exc:
                exc.migrated = migrated  # type: ignore[attr-defined]
                raise
            finally:
                self._end()
        return migrated

    def eager_migrate_all(self) -> int:
        return sum(self.eager_migrate(h.prefix) for h in self.registry.heads())

    # -- stats ---------------------------------------------------------------

    def stats(self) -> MigrationStats:
        s = self._stats
        snap = MigrationStats(**{k: getattr(s, k) for k in s.__dataclass_fields__})
        snap.timeline = dict(s.timeline)
        snap.max_edge_transforms = max(self.edges.values(), default=0)
        return snap

    # -- data commands -------------------------------------------------------

    def get(self, key: bytes) -> Payload | None:
        key = check_key(key)
        if self.bypass:
            e = self.store.raw_get(key)
            return None if e is None else e.payload
        rec = self.registry.match(key)
        if rec is not None and rec.next is None:
            # hot path: a string already tagged with its head version
            raw = self.store._data.get(key)
            if raw.__class__ is bytes and raw[:4] == rec.packed_tag:
                return Str(raw[4:])
        e = self.store.raw_get(key)
        if rec is None:
            return None if e is None else e.payload
        if rec.next is None:
            # a tag equal to the head version is valid under the head text
            if e is not None:
                if e.version == rec.version:
                    return e.payload
            elif rec.prev is None:
                return None
        self._begin()
        try:
            _, entry = self._current(key)
        finally:
            self._end()
        return None if entry is None else entry.payload

    def set(self, key: bytes, value, flag: str | None = None) -> bool:
        key = check_key(key)
        if flag is None and self.journal is None and value.__class__ is bytes and not self.bypass:
            rec = self.registry.match(key)
            # one-record chains have no old names and no mis-filed occupants
            if rec is None:
                self.store._data[key] = _UNTAGGED + value
                return True
            if rec.prev is None and rec.next is None:
                self.store._data[key] = rec.packed_tag + value
                return True
        payload = _as_payload(value)
        if flag is not None:
            flag = flag.upper()
            if flag not in ("NX", "XX"):
                raise ValueError(f"unknown SET flag {flag!r}")
        if self.bypass:
            if flag is not None and (key in self.store) != (flag == "XX"):
                return False
            self.store.put(key, payload, 0)
            return True
        self._begin()
        try:
            loc = self._locate(key)
            exists = loc.entry is not None
            if (flag == "NX" and exists) or (flag == "XX" and not exists):
                return False
            if loc.name is not None and loc.name != key:
                self.store.raw_delete(loc.name)
                self._stats.residue_deletes += 1
            self._write(key, loc.head, payload)
            return True
        finally:
            self._end()

    def delete(self, key: bytes) -> bool:
        key = check_key(key)
        if self.bypass:
            return self.store.raw_delete(key)
        self._begin()
        try:
            loc = self._locate(key)
            if loc.entry is None:
                return False
            self.store.raw_delete(loc.name)  # type: ignore[arg-type]
            if loc.name != key:
                self._stats.residue_deletes += 1
            return True
        finally:
            self._end()

    def exists(self, key: bytes) -> bool:
        return self.get(key) is not None

    def _container(self, key: bytes, cls, create: bool):
        """Current container at ``key`` (migrated), or a fresh one when absent."""
        key = check_key(key)
        if self.bypass:
            e = self.store.raw_get(key)
            head = None
        else:
            head, e = self._current(key)
        if e is None:
            return head, (cls({} if cls in (Hash, ZSet) else set() if cls is Set else []) if create else None)
        if not isinstance(e.payload, cls):
            raise WrongTypeError(key, cls.KIND, e.payload.KIND)
        return head, core.copy_payload(e.payload)

    def _store_container(self, key: bytes, head, payload: Payload) -> None:
        empty = not (
            payload.items if isinstance(payload, List)
            else payload.members if isinstance(payload, Set)
            else payload.fields if isinstance(payload, Hash)
            else payload.scores  # type: ignore[union-attr]
        )
        if empty:
            self.store.raw_delete(key)
        elif self.bypass:
            self.store.raw_set(key, payload, 0)
        else:
            self._write(key, head, payload)

    def _run(self, fn):
        self._begin()
        try:
            return fn()
        finally:
            self._end()

    def lpush(self, key: bytes, *values: bytes) -> int:
        def op():
            head, lst = self._container(key, List, True)
            for v in values:
                lst.items.insert(0, bytes(v))
            self._store_container(key, head, lst)
            return len(lst.items)
        return self._run(op)

    def lpop(self, key: bytes) -> bytes | None:
        def op():
            head, lst = self._container(key, List, False)
            if lst is None or not lst.items:
                return None
            v = lst.items.pop(0)
            self._store_container(key, head, lst)
            return v
        return self._run(op)

    def lrange(self, key: bytes, start: int, stop: int) -> list[bytes]:
        def op():
            _, lst = self._container(key, List, False)
            if lst is None:
                return []
            n = len(lst.items)
            a = start + n if start < 0 else start
            b = stop + n if stop < 0 else stop
            a = max(a, 0)
            if a > b or a >= n:
                return []
            return lst.items[a : min(b, n - 1) + 1]
        return self._run(op)

    def sadd(self, key: bytes, *members: bytes) -> int:
        def op():
            head, s = self._container(key, Set, True)
            before = len(s.members)
            s.members.update(bytes(m) for m in members)
            self._store_container(key, head, s)
            return len(s.members) - before
        return self._run(op)

    def spop(self, key: bytes) -> bytes | None:
        """Remove and return the smallest member (deterministic SPOP)."""
        def op():
            head, s = self._container(key, Set, False)
            if s is None or not s.members:
                return None
            m = min(s.members)
            s.members.discard(m)
            self._store_container(key, head, s)
            return m
        return self._run(op)

    def smembers(self, key: bytes) -> list[bytes]:
        def op():
            _, s = self._container(key, Set, False)
            return [] if s is None else sorted(s.members)
        return self._run(op)

    def hset(self, key: bytes, *pairs: bytes) -> int:
        if not pairs or len(pairs) % 2:
            raise ValueError("HSET needs field value pairs")
        def op():
            head, h = self._container(key, Hash, True)
            added = 0
            for f, v in zip(pairs[::2], pairs[1::2]):
                if f not in h.fields:
                    added += 1
                h.fields[bytes(f)] = bytes(v)
            self._store_container(key, head, h)
            return added
        return self._run(op)

    def hget(self, key: bytes, fieldname: bytes) -> bytes | None:
        def op():
            _, h = self._container(key, Hash, False)
            return None if h is None else h.fields.get(fieldname)
        return self._run(op)

    def hgetall(self, key: bytes) -> list[bytes]:
        def op():
            _, h = self._container(key, Hash, False)
            if h is None:
                return []
            out: list[bytes] = []
            for f in sorted(h.fields):
                out += [f, h.fields[f]]
            return out
        return self._run(op)

    def zadd(self, key: bytes, *pairs) -> int:
        if not pairs or len(pairs) % 2:
            raise ValueError("ZADD needs score member pairs")
        scored = [(core.check_score(s), bytes(m)) for s, m in zip(pairs[::2], pairs[1::2])]
        def op():
            head, z = self._container(key, ZSet, True)
            added = 0
            for s, m in scored:
                if m not in z.scores:
                    added += 1
                z.scores[m] = s
            self._store_container(key, head, z)
            return added
        return self._run(op)

    def zscore(self, key: bytes, member: bytes) -> float | None:
        def op():
            _, z = self._container(key, ZSet, False)
            return None if z is None else z.scores.get(member)
        return self._run(op)

    CONTAINER_OPS = (
        "lpush", "lpop", "lrange", "sadd", "spop", "smembers",
        "hset", "hget", "hgetall", "zadd", "zscore",
    )

    def container_op(self, op: str, key: bytes, *args):
        op = op.lower()
        if op not in self.CONTAINER_OPS:
            raise ValueError(f"unknown container op {op!r}")
        return getattr(self, op)(key, *args)

    # -- whole-store views ---------------------------------------------------

    def logical_items(self) -> dict[bytes, Payload]:
        """The store as clients see it, computed without mutating anything."""
        out: dict[bytes, Payload] = {}
        for name, entry in self.store.items():
            owner = self.registry.match(name)
            if owner is None:
                out[name] = entry.payload
                continue
            chain = owner.chain
            if self._is_stale(chain, name, entry):
                logical, payload, _ = self._plan_migration(chain, name, entry)
            else:
                logical, payload = name, entry.payload
            out[logical] = payload
        return out
