"""Logical versions per key prefix and the update information table.

Each family of keys is a *chain* of ``PrefixRecord`` objects, oldest first.
A record holds the prefix text at that version and the transformer names
that carry values from the previous record's version to its own. Renames
append a record with a new text; value-only updates append one with the same
text.

A prefix text ``T`` matches a key ``K`` when ``K`` starts with ``T``, is
longer than ``T``, and either ``T`` ends in a delimiter (``:`` or ``/``) or the
byte following ``T`` in ``K`` is ``:``. Among all texts matching a key the
longest one decides which chain owns it.
"""

from __future__ import annotations

import bisect
import struct
from dataclasses import dataclass, field
from typing import Iterable, Sequence

from .core import MAX_VERSION
from .errors import UpdateRejected

DELIMS = b":/"
_COLON = ord(":")
_SLASH = ord("/")
_FORBIDDEN = frozenset(b" \t\r\n\0")


@dataclass(eq=False)
class PrefixRecord:
    prefix: bytes
    version: int
    chain: "Chain" = field(repr=False)
    prev: "PrefixRecord | None" = field(default=None, repr=False)
    next: "PrefixRecord | None" = field(default=None, repr=False)
    transformers: tuple[str, ...] = ()
    sessions: set = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        # the store's 4-byte string tag for this version
        self.packed_tag = struct.pack("<I", self.version)


@dataclass(eq=False)
class Chain:
    id: int
    records: list[PrefixRecord] = field(default_factory=list)

    @property
    def head(self) -> PrefixRecord:
        return self.records[-1]

    @property
    def base(self) -> PrefixRecord:
        return self.records[0]

    def texts(self) -> set[bytes]:
        return {r.prefix for r in self.records}

    def record_for_tag(self, tag: int) -> PrefixRecord:
        """The latest record with version <= tag (the base record if none)."""
        versions = [r.version for r in self.records]
        i = bisect.bisect_right(versions, tag) - 1
        return self.records[max(i, 0)]

    def transformers_after(self, record: PrefixRecord) -> list[str]:
        names: list[str] = []
        r = record.next
        while r is not None:
            names.extend(r.transformers)
            r = r.next
        return names

    def ancestors(self) -> list[PrefixRecord]:
        """One record per distinct text, newest text first."""
        out: list[PrefixRecord] = []
        for r in reversed(self.records):
            if not out or out[-1].prefix != r.prefix:
                out.append(r)
        return out


@dataclass
class PrefixChange:
    old_prefix: bytes
    new_prefix: bytes
    from_version: int
    to_version: int
    transformers: tuple[str, ...] = ()

    @property
    def renames(self) -> bool:
        return self.old_prefix != self.new_prefix


def check_text(text: bytes) -> bytes:
    if not isinstance(text, (bytes, bytearray)) or not text:
        raise UpdateRejected("prefix text must be non-empty bytes")
    if any(b in _FORBIDDEN for b in text):
        raise UpdateRejected(f"prefix text {bytes(text)!r} contains whitespace or NUL")
    return bytes(text)


def text_matches(text: bytes, key: bytes) -> bool:
    n = len(text)
    if len(key) <= n or not key.startswith(text):
        return False
    return text[-1] in DELIMS or key[n] == _COLON


def rewrite(key: bytes, old: bytes, new: bytes) -> bytes:
    return new + key[len(old) :]


def candidate_lengths(key: bytes) -> list[int]:
    """Lengths L such that key[:L] could be a matching prefix text, longest first."""
    n = len(key)
    cuts = set()
    i = key.find(b":")
    while i >= 0:
        if i >= 1:
            cuts.add(i)
        if i + 1 < n:
            cuts.add(i + 1)
        i = key.find(b":", i + 1)
    i = key.find(b"/")
    while i >= 0:
        if i + 1 < n:
            cuts.add(i + 1)
        i = key.find(b"/", i + 1)
    return sorted(cuts, reverse=True)


_LINEAR_SCAN_MAX = 16


class Registry:
    def __init__(self) -> None:
        self.chains: dict[int, Chain] = {}
        # every text ever used -> the newest record carrying it
        self.by_text: dict[bytes, PrefixRecord] = {}
        self.sessions: dict[object, dict[bytes, PrefixRecord]] = {}
        self._by_length: list[bytes] = []
        self._scan: list[tuple[bytes, int, bool, PrefixRecord]] = []
        self._next_chain = 1

    def _index(self, text: bytes, rec: PrefixRecord) -> None:
        self.by_text[text] = rec
        self._reindex()

    def _reindex(self) -> None:
        self._by_length = sorted(self.by_text, key=len, reverse=True)
        self._scan = [
            (t, len(t), t[-1] in DELIMS, self.by_text[t]) for t in self._by_length
        ]
        small = len(self._scan) <= _LINEAR_SCAN_MAX
        self.match = self._match_linear if small else self._match_cuts  # type: ignore[method-assign]

    # -- lookup ------------------------------------------------------------

    def __bool__(self) -> bool:
        return bool(self.by_text)

    def match(self, key: bytes) -> PrefixRecord | None:
        """Record for the longest text (head or retired) matching ``key``."""
        # rebound per instance by _reindex to the strategy that suits its size
        return self._match_linear(key)

    def _match_linear(self, key: bytes) -> PrefixRecord | None:
        for text, n, delimited, rec in self._scan:
            if key.startswith(text) and len(key) > n and (delimited or key[n] == _COLON):
                return rec
        return None

    def _match_cuts(self, key: bytes) -> PrefixRecord | None:
        by_text = self.by_text
        for n in candidate_lengths(key):
            rec = by_text.get(key[:n])
            if rec is not None:
                return rec
        return None

    def resolve(self, key: bytes) -> PrefixRecord | None:
        """Head record governing ``key``, or None (ungoverned or retired)."""
        rec = self.match(key)
        if rec is None:
            return None
        head = rec.chain.head
        return head if head.prefix == rec.prefix else None

    def lookup(self, text: bytes) -> PrefixRecord | None:
        return self.by_text.get(text)

    def logical_version(self, key: bytes) -> int:
        rec = self.match(key)
        return 0 if rec is None else rec.chain.head.version

    @staticmethod
    def back_map(record: PrefixRecord, key: bytes) -> bytes | None:
        if record.prev is None:
            return None
        return rewrite(key, record.prefix, record.prev.prefix)

    def heads(self) -> list[PrefixRecord]:
        return [c.head for c in self.chains.values()]

    # -- chain bootstrap ---------------------------------------------------

    def _sim_state(self) -> tuple[dict, dict]:
        owner: dict[bytes, object] = {t: r.chain.id for t, r in self.by_text.items()}
        sim: dict[object, list] = {
            cid: [c.head.prefix, c.head.version, c.texts(), len(c.records)]
            for cid, c in self.chains.items()
        }
        return owner, sim

    def _creation_conflict(self, text: bytes) -> bytes | None:
        """Existing text whose namespace makes a new chain at ``text`` unsafe."""
        return self._sim_conflict(text, *self._sim_state())

    def _create_chain(self, text: bytes, version: int) -> Chain:
        chain = Chain(self._next_chain)
        self._next_chain += 1
        rec = PrefixRecord(text, version, chain)
        chain.records.append(rec)
        self.chains[chain.id] = chain
        self._index(text, rec)
        return chain

    # -- sessions ----------------------------------------------------------

    def declare(self, session: object, prefix: bytes, version: int) -> int | None:
        """Pin ``session`` to (prefix, version). Returns None on accept, else
        the current logical version the client must upgrade to."""
        result = self.hello(session, [(prefix, version)])
        return None if result is None else result[1]

    def hello(
        self, session: object, pairs: Sequence[tuple[bytes, int]]
    ) -> tuple[bytes, int] | None:
        """All-or-nothing declaration. Returns None on accept or the first
        mismatching (prefix, current version)."""
        create: dict[bytes, int] = {}
        pins: list[bytes] = []
        for prefix, version in pairs:
            prefix = check_text(prefix)
            rec = self.by_text.get(prefix)
            if rec is None:
                if prefix in create:
                    if create[prefix] != version:
                        return prefix, create[prefix]
                    continue
                if not 0 <= version <= MAX_VERSION:
                    return prefix, 0
                conflict = self._creation_conflict(prefix)
                if conflict is not None:
                    return prefix, self.by_text[conflict].chain.head.version
                create[prefix] = version
            else:
                head = rec.chain.head
                if head.prefix != prefix or head.version != version:
                    return prefix, head.version
                pins.append(prefix)
        made: list[Chain] = []
        for prefix, version in create.items():
            conflict = self._creation_conflict(prefix)
            if conflict is not None:
                for chain in made:
                    self._remove_chain(chain)
                return prefix, self.by_text[conflict].chain.head.version
            made.append(self._create_chain(prefix, version))
            pins.append(prefix)
        declared = self.sessions.setdefault(session, {})
        for prefix in pins:
            rec = self.by_text[prefix]
            rec.sessions.add(session)
            declared[prefix] = rec
        return None

    def _remove_chain(self, chain: Chain) -> None:
        del self.chains[chain.id]
        for r in chain.records:
            self.by_text.pop(r.prefix, None)
        self._reindex()

    def drop_session(self, session: object) -> None:
        for rec in self.sessions.pop(session, {}).values():
            rec.sessions.discard(session)

    def session_versions(self, session: object) -> dict[bytes, int]:
        return {p: r.version for p, r in self.sessions.get(session, {}).items()}

    # -- installing updates ------------------------------------------------

    def validate(self, changes: Iterable[PrefixChange]) -> None:
        """Raise UpdateRejected unless every change can be applied in order."""
        self._plan(list(changes))

    def _plan(self, changes: list[PrefixChange]) -> list[tuple[object, PrefixChange]]:
        # simulated state: chain key -> [head text, head version, texts, nrecords]
        owner, sim = self._sim_state()
        plan: list[tuple[object, PrefixChange]] = []
        for ch in changes:
            old = check_text(ch.old_prefix)
            new = check_text(ch.new_prefix)
            if not (0 <= ch.from_version <= MAX_VERSION and 0 <= ch.to_version <= MAX_VERSION):
                raise UpdateRejected("version outside uint32")
            if ch.to_version != ch.from_version + 1:
                raise UpdateRejected(
                    f"version: {old!r} must advance by one ({ch.from_version} -> {ch.to_version})"
                )
            cid = owner.get(old)
            if cid is None:
                # first mention of a prefix bootstraps its chain at from_version
                conflict = self._sim_conflict(old, owner, sim)
                if conflict is not None:
                    raise UpdateRejected(
                        f"prefix {old!r} lies inside the namespace of {conflict!r}"
                    )
                cid = ("new", old)
                sim[cid] = [old, ch.from_version, {old}, 1]
                owner[old] = cid
                plan.append((cid, PrefixChange(old, old, ch.from_version, ch.from_version)))
            state = sim[cid]
            if state[0] != old:
                raise UpdateRejected(f"prefix {old!r} was renamed to {state[0]!r}")
            if state[1] != ch.from_version:
                raise UpdateRejected(
                    f"version: {old!r} is at {state[1]}, not {ch.from_version}"
                )
            if new != old:
                if new in owner:
                    raise UpdateRejected(f"prefix {new!r} already in use")
                if (old[-1] in DELIMS) != (new[-1] in DELIMS):
                    raise UpdateRejected(
                        f"rename {old!r} -> {new!r} changes delimiter termination"
                    )
                for text, other in owner.items():
                    if other == cid:
                        continue
                    if text_matches(text, new):
                        raise UpdateRejected(
                            f"ambiguous rename: {new!r} lies inside {text!r}"
                        )
                    if text_matches(new, text):
                        raise UpdateRejected(
                            f"ambiguous rename: {new!r} is a prefix of {text!r}"
                        )
                owner[new] = cid
                state[2].add(new)
            state[0] = new
            state[1] = ch.to_version
            state[3] += 1
            plan.append((cid, ch))
        return plan

    def _sim_conflict(self, text: bytes, owner: dict, sim: dict) -> bytes | None:
        for other_text, cid in owner.items():
            if other_text == text:
                continue
            if text_matches(other_text, text):
                head_text, _, _, nrec = sim[cid]
                if head_text != other_text or nrec > 1:
                    return other_text
        return None

    def advance(self, changes: Sequence[PrefixChange]) -> set:
        """Apply an update spec atomically; return the sessions to disconnect."""
        plan = self._plan(list(changes))
        created: dict[object, Chain] = {}
        superseded: list[PrefixRecord] = []
        for cid, ch in plan:
            if isinstance(cid, tuple):
                if cid not in created:
                    created[cid] = self._create_chain(ch.old_prefix, ch.from_version)
                    continue
                chain = created[cid]
            else:
                chain = self.chains[cid]
            head = chain.head
            superseded.append(head)
            rec = PrefixRecord(
                ch.new_prefix, ch.to_version, chain, prev=head,
                transformers=tuple(ch.transformers),
            )
            head.next = rec
            chain.records.append(rec)
            self._index(ch.new_prefix, rec)
        stale: set = set()
        for rec in superseded:
            stale |= rec.sessions
        for session in stale:
            self.drop_session(session)
        return stale

    # -- integrity & persistence ------------------------------------------

    def check_integrity(self) -> None:
        seen: dict[bytes, int] = {}
        for chain in self.chains.values():
            recs = chain.records
            assert recs, "empty chain"
            assert recs[0].prev is None and recs[-1].next is None
            for a, b in zip(recs, recs[1:]):
                assert a.next is b and b.prev is a, "broken links"
                assert b.version > a.version, "versions must increase"
            for r in recs:
                assert r.chain is chain
                other = seen.setdefault(r.prefix, chain.id)
                assert other == chain.id, f"text {r.prefix!r} in two chains"
                assert self.by_text[r.prefix].chain is chain
        for session, declared in self.sessions.items():
            for prefix, rec in declared.items():
                head = rec.chain.head
                assert head is rec, f"session {session!r} pinned to stale {prefix!r}"
                assert session in rec.sessions

    def to_state(self) -> list[list[tuple[bytes, int, tuple[str, ...]]]]:
        return [
            [(r.prefix, r.version, r.transformers) for r in chain.records]
            for chain in sorted(self.chains.values(), key=lambda c: c.id)
        ]

    @classmethod
    def from_state(cls, state: list) -> "Registry":
        reg = cls()
        for records in state:
            chain = Chain(reg._next_chain)
            reg._next_chain += 1
            prev = None
            for prefix, version, transformers in records:
                rec = PrefixRecord(prefix, version, chain, prev=prev, transformers=tuple(transformers))
                if prev is not None:
                    prev.next = rec
                chain.records.append(rec)
                reg._index(prefix, rec)
                prev = rec
            reg.chains[chain.id] = chain
        return reg

    def digest_state(self) -> tuple:
        return tuple(tuple(c) for c in self.to_state())
