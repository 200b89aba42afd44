"""The raw versioned store: typed payloads stamped with a version tag.

Nothing in this module knows about prefixes chains or migration; ``raw_get``
never mutates, ``raw_set`` replaces an entry wholesale.

String entries are held as ``bytes`` with the 4-byte little-endian tag
packed in front of the value, so a tagged string costs the same allocator
block as an untagged one in the common small-value case. Containers carry
their tag on a ``VersionedValue`` wrapper; one tag per container.
"""

from __future__ import annotations

import hashlib
import math
import struct
from dataclasses import dataclass
from typing import Callable, Iterator, Union

from .errors import KeyFormatError, VersionError

MAX_KEY_LEN = 4096
MAX_VERSION = 2**32 - 1
DELIMITER = b":"

_TAG = struct.Struct("<I")
_U32 = struct.Struct("<I")
_F64 = struct.Struct("<d")


@dataclass(slots=True)
class Str:
    value: bytes
    KIND = "string"


@dataclass(slots=True)
class List:
    items: list
    KIND = "list"


@dataclass(slots=True)
class Set:
    members: set
    KIND = "set"


@dataclass(slots=True)
class Hash:
    fields: dict
    KIND = "hash"


@dataclass(slots=True)
class ZSet:
    scores: dict
    KIND = "zset"


Payload = Union[Str, List, Set, Hash, ZSet]
KINDS = {cls.KIND: cls for cls in (Str, List, Set, Hash, ZSet)}
KIND_CODES = {"string": 0, "list": 1, "set": 2, "hash": 3, "zset": 4}
CODE_KINDS = {v: k for k, v in KIND_CODES.items()}


@dataclass(slots=True)
class VersionedValue:
    payload: Payload
    version: int


def check_key(key: bytes) -> bytes:
    if not isinstance(key, (bytes, bytearray)):
        raise KeyFormatError(f"key must be bytes, got {type(key).__name__}")
    if not 1 <= len(key) <= MAX_KEY_LEN:
        raise KeyFormatError(f"key length {len(key)} outside 1..{MAX_KEY_LEN}")
    if b"\n" in key or b"\0" in key:
        raise KeyFormatError("key contains newline or NUL")
    return bytes(key)


def key_prefix(key: bytes) -> bytes:
    """Bytes up to and including the last ``:``; empty when there is none."""
    i = key.rfind(DELIMITER)
    return key[: i + 1] if i >= 0 else b""


def check_score(score: float) -> float:
    score = float(score)
    if not math.isfinite(score):
        raise ValueError(f"score must be finite, got {score!r}")
    return score


def validate_payload(payload: Payload) -> Payload:
    if isinstance(payload, Str):
        if not isinstance(payload.value, bytes):
            raise TypeError("Str value must be bytes")
    elif isinstance(payload, List):
        if not all(isinstance(x, bytes) for x in payload.items):
            raise TypeError("List items must be bytes")
    elif isinstance(payload, Set):
        if not all(isinstance(x, bytes) for x in payload.members):
            raise TypeError("Set members must be bytes")
    elif isinstance(payload, Hash):
        for f, v in payload.fields.items():
            if not isinstance(f, bytes) or not isinstance(v, bytes):
                raise TypeError("Hash fields and values must be bytes")
    elif isinstance(payload, ZSet):
        for m, s in payload.scores.items():
            if not isinstance(m, bytes):
                raise TypeError("ZSet members must be bytes")
            check_score(s)
    else:
        raise TypeError(f"not a payload: {payload!r}")
    return payload


def copy_payload(payload: Payload) -> Payload:
    if isinstance(payload, Str):
        return payload
    if isinstance(payload, List):
        return List(list(payload.items))
    if isinstance(payload, Set):
        return Set(set(payload.members))
    if isinstance(payload, Hash):
        return Hash(dict(payload.fields))
    return ZSet(dict(payload.scores))


def _pack_bytes(out: list, b: bytes) -> None:
    out.append(_U32.pack(len(b)))
    out.append(b)


def encode_payload(payload: Payload) -> bytes:
    """Canonical byte encoding; sets and maps are emitted in sorted order."""
    out: list[bytes] = []
    if isinstance(payload, Str):
        return payload.value
    if isinstance(payload, List):
        out.append(_U32.pack(len(payload.items)))
        for item in payload.items:
            _pack_bytes(out, item)
    elif isinstance(payload, Set):
        out.append(_U32.pack(len(payload.members)))
        for m in sorted(payload.members):
            _pack_bytes(out, m)
    elif isinstance(payload, Hash):
        out.append(_U32.pack(len(payload.fields)))
        for f in sorted(payload.fields):
            _pack_bytes(out, f)
            _pack_bytes(out, payload.fields[f])
    elif isinstance(payload, ZSet):
        out.append(_U32.pack(len(payload.scores)))
        for m in sorted(payload.scores):
            _pack_bytes(out, m)
            out.append(_F64.pack(payload.scores[m]))
    else:
        raise TypeError(f"not a payload: {payload!r}")
    return b"".join(out)


def decode_payload(kind: str, data: bytes) -> Payload:
    if kind == "string":
        return Str(bytes(data))
    view = memoryview(data)
    (n,) = _U32.unpack_from(view, 0)
    pos = 4

    def take() -> bytes:
        nonlocal pos
        (length,) = _U32.unpack_from(view, pos)
        pos += 4
        if pos + length > len(view):
            raise ValueError("truncated payload")
        b = bytes(view[pos : pos + length])
        pos += length
        return b

    if kind == "list":
        result: Payload = List([take() for _ in range(n)])
    elif kind == "set":
        result = Set({take() for _ in range(n)})
    elif kind == "hash":
        fields = {}
        for _ in range(n):
            f = take()
            fields[f] = take()
        result = Hash(fields)
    elif kind == "zset":
        scores = {}
        for _ in range(n):
            m = take()
            (scores[m],) = _F64.unpack_from(view, pos)
            pos += 8
        result = ZSet(scores)
    else:
        raise ValueError(f"unknown payload kind {kind!r}")
    if pos != len(view):
        raise ValueError("trailing bytes after payload")
    return result


class Store:
    """In-memory map from key to versioned value.

    ``logical_version`` bounds the tag accepted by ``raw_set`` for a key. With
    ``versioned=False`` the store keeps no tags at all (every entry reads
    back at version 0); this is the interceptor-bypassed build used as the
    overhead baseline.

    When ``journal`` is a list, every mutation is appended to it as
    ``("w", key, payload, version)`` or ``("d", key)``.
    """

    def __init__(
        self,
        logical_version: Callable[[bytes], int] | None = None,
        *,
        versioned: bool = True,
    ):
        self._data: dict[bytes, object] = {}
        self._bound = logical_version
        self.versioned = versioned
        self.journal: list | None = None

    def __len__(self) -> int:
        return len(self._data)

    def __contains__(self, key: bytes) -> bool:
        return key in self._data

    def keys(self) -> list[bytes]:
        return list(self._data)

    def raw_get(self, key: bytes) -> VersionedValue | None:
        e = self._data.get(key)
        if e is None:
            return None
        if type(e) is bytes:
            if self.versioned:
                return VersionedValue(Str(e[4:]), _TAG.unpack_from(e)[0])
            return VersionedValue(Str(e), 0)
        if self.versioned:
            return e  # type: ignore[return-value]
        return VersionedValue(e, 0)  # type: ignore[arg-type]

    def raw_set(self, key: bytes, payload: Payload, version: int) -> None:
        if not 0 <= version <= MAX_VERSION:
            raise VersionError(f"version {version} outside uint32")
        if self._bound is not None:
            bound = self._bound(key)
            if version > bound:
                raise VersionError(
                    f"version {version} above logical version {bound} for {key!r}"
                )
        self.put(key, payload, version)

    def put(self, key: bytes, payload: Payload, version: int) -> None:
        """``raw_set`` for callers that already know the tag is in bounds."""
        if payload.__class__ is Str:
            if self.versioned:
                self._data[key] = _TAG.pack(version) + payload.value
            else:
                self._data[key] = payload.value
        elif self.versioned:
            self._data[key] = VersionedValue(payload, version)
        else:
            self._data[key] = payload
        if self.journal is not None:
            self.journal.append(("w", key, payload, version))

    def raw_delete(self, key: bytes) -> bool:
        if self._data.pop(key, None) is None:
            return False
        if self.journal is not None:
            self.journal.append(("d", key))
        return True

    def scan_prefix(self, prefix: bytes) -> Iterator[bytes]:
        # snapshot: callers may mutate the store while iterating
        if not prefix:
            return iter(list(self._data))
        return iter([k for k in self._data if k.startswith(prefix)])

    def items(self) -> Iterator[tuple[bytes, VersionedValue]]:
        for key in list(self._data):
            entry = self.raw_get(key)
            if entry is not None:
                yield key, entry

    def clear(self) -> None:
        self._data.clear()

    def digest(self, *, with_tags: bool = True) -> str:
        h = hashlib.sha256()
        for key in sorted(self._data):
            entry = self.raw_get(key)
            assert entry is not None
            body = encode_payload(entry.payload)
            h.update(_U32.pack(len(key)) + key)
            h.update(bytes([KIND_CODES[entry.payload.KIND]]))
            h.update(_U32.pack(len(body)) + body)
            if with_tags:
                h.update(_TAG.pack(entry.version))
        return h.hexdigest()


def logical_digest(mapping: dict[bytes, Payload]) -> str:
    """Digest of a plain key->payload mapping, comparable to ``Store.digest(with_tags=False)``."""
    h = hashlib.sha256()
    for key in sorted(mapping):
        payload = mapping[key]
        body = encode_payload(payload)
        h.update(_U32.pack(len(key)) + key)
        h.update(bytes([KIND_CODES[payload.KIND]]))
        h.update(_U32.pack(len(body)) + body)
    return h.hexdigest()
