"""Snapshot file plus append-only log.

Log layout: ``KVLG`` magic and a u16 format, then frames of
``u32 body length | u32 crc32(body) | body`` where the body is
``u64 seq | u8 kind | fields``. One data command is one ``Batch`` frame, so a
torn tail never leaves half a command behind. Install frames are flushed and
fsynced before the install is acknowledged; data frames flush every
``flush_every`` records.

Snapshot layout: ``KVLV`` magic, u16 format, u64 last log seq covered, the
registry section, the data section, then a crc32 of everything before it.
The snapshot is written to a temporary file and renamed into place, after
which the log is restarted with a ``SnapshotMark``. Log frames whose seq is
covered by the snapshot are skipped on replay, which makes a crash between
the rename and the log reset harmless. Chains first created by a client
declaration get a ``Declare`` frame so that replay rebuilds the same
namespace even when no update ever mentions them.

All integers are little-endian and fixed width; byte strings are u32
length-prefixed.
"""

from __future__ import annotations

import io
import os
import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path

from .core import CODE_KINDS, KIND_CODES, decode_payload, encode_payload
from .errors import CorruptFileError
from .registry import PrefixChange, Registry
from .specdoc import UpdateSpec
from .transform import Program, parse_program

LOG_MAGIC = b"KVLG"
SNAP_MAGIC = b"KVLV"
FORMAT = 1

DATA_WRITE = 1
DATA_DELETE = 2
INSTALL = 3
SNAPSHOT_MARK = 4
BATCH = 5
DECLARE = 6

_U8 = struct.Struct("<B")
_U16 = struct.Struct("<H")
_U32 = struct.Struct("<I")
_U64 = struct.Struct("<Q")
_FRAME = struct.Struct("<II")
_LOG_HEADER = LOG_MAGIC + _U16.pack(FORMAT)


class _Reader:
    def __init__(self, data: bytes, pos: int = 0):
        self.data = data
        self.pos = pos

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.data):
            raise CorruptFileError("truncated record")
        b = self.data[self.pos : self.pos + n]
        self.pos += n
        return b

    def u8(self) -> int:
        return self.take(1)[0]

    def u32(self) -> int:
        return _U32.unpack(self.take(4))[0]

    def u64(self) -> int:
        return _U64.unpack(self.take(8))[0]

    def blob(self) -> bytes:
        return self.take(self.u32())

    def text(self) -> str:
        return self.blob().decode("utf-8")


def _blob(b: bytes) -> bytes:
    return _U32.pack(len(b)) + b


def _text(s: str) -> bytes:
    return _blob(s.encode("utf-8"))


# -- record bodies -------------------------------------------------------------


def _encode_op(op: tuple) -> bytes:
    if op[0] == "w":
        _, key, payload, version = op
        return (
            _U8.pack(DATA_WRITE) + _blob(key) + _U8.pack(KIND_CODES[payload.KIND])
            + _blob(encode_payload(payload)) + _U32.pack(version)
        )
    return _U8.pack(DATA_DELETE) + _blob(op[1])


def _decode_op(r: _Reader) -> tuple:
    kind = r.u8()
    if kind == DATA_WRITE:
        key = r.blob()
        code = r.u8()
        if code not in CODE_KINDS:
            raise CorruptFileError(f"unknown payload kind {code}")
        try:
            payload = decode_payload(CODE_KINDS[code], r.blob())
        except (ValueError, struct.error) as exc:
            raise CorruptFileError(f"bad payload: {exc}") from None
        return ("w", key, payload, r.u32())
    if kind == DATA_DELETE:
        return ("d", r.blob())
    raise CorruptFileError(f"unknown data op {kind}")


def _encode_install(spec: UpdateSpec, programs: dict[str, Program]) -> bytes:
    out = [_U32.pack(len(spec.changes))]
    for c in spec.changes:
        out += [
            _blob(c.old_prefix), _blob(c.new_prefix),
            _U32.pack(c.from_version), _U32.pack(c.to_version),
            _U32.pack(len(c.transformers)),
        ]
        out += [_text(n) for n in c.transformers]
    out.append(_U32.pack(len(programs)))
    for name, prog in programs.items():
        out += [_text(name), _text(prog.to_text())]
    return b"".join(out)


def _decode_install(r: _Reader) -> tuple[UpdateSpec, dict[str, Program]]:
    changes = []
    for _ in range(r.u32()):
        old, new = r.blob(), r.blob()
        v0, v1 = r.u32(), r.u32()
        names = tuple(r.text() for _ in range(r.u32()))
        changes.append(PrefixChange(old, new, v0, v1, names))
    programs = {}
    for _ in range(r.u32()):
        name = r.text()
        programs[name] = parse_program(r.text())
    return UpdateSpec(changes), programs


@dataclass
class LogRecord:
    seq: int
    kind: int
    ops: list = field(default_factory=list)
    spec: UpdateSpec | None = None
    programs: dict = field(default_factory=dict)


def encode_record(rec: LogRecord) -> bytes:
    body = _U64.pack(rec.seq) + _U8.pack(rec.kind)
    if rec.kind == BATCH:
        body += _U32.pack(len(rec.ops)) + b"".join(_encode_op(op) for op in rec.ops)
    elif rec.kind in (DATA_WRITE, DATA_DELETE):
        body = _U64.pack(rec.seq) + _encode_op(rec.ops[0])
    elif rec.kind == INSTALL:
        body += _encode_install(rec.spec, rec.programs)  # type: ignore[arg-type]
    elif rec.kind == DECLARE:
        body += _U32.pack(len(rec.ops)) + b"".join(_blob(t) + _U32.pack(v) for t, v in rec.ops)
    return _FRAME.pack(len(body), zlib.crc32(body)) + body


def decode_record(body: bytes) -> LogRecord:
    r = _Reader(body)
    seq = r.u64()
    kind = body[r.pos]
    if kind in (DATA_WRITE, DATA_DELETE):
        rec = LogRecord(seq, kind, [_decode_op(r)])
    else:
        r.pos += 1
        rec = LogRecord(seq, kind)
        if kind == BATCH:
            rec.ops = [_decode_op(r) for _ in range(r.u32())]
        elif kind == INSTALL:
            rec.spec, rec.programs = _decode_install(r)
        elif kind == DECLARE:
            rec.ops = [(r.blob(), r.u32()) for _ in range(r.u32())]
        elif kind != SNAPSHOT_MARK:
            raise CorruptFileError(f"unknown record kind {kind}")
    if r.pos != len(body):
        raise CorruptFileError("trailing bytes in record")
    return rec


def read_log(data: bytes) -> tuple[list[LogRecord], int]:
    """Parse a log image; returns the valid records and the offset where the
    valid prefix ends (a torn or corrupt tail starts there)."""
    if not data:
        return [], 0
    if data[: len(_LOG_HEADER)] != _LOG_HEADER:
        if len(data) < len(_LOG_HEADER) and _LOG_HEADER.startswith(data):
            return [], 0
        raise CorruptFileError("bad log header")
    pos = len(_LOG_HEADER)
    records: list[LogRecord] = []
    last_seq = -1
    while pos + _FRAME.size <= len(data):
        length, crc = _FRAME.unpack_from(data, pos)
        end = pos + _FRAME.size + length
        if end > len(data):
            break
        body = data[pos + _FRAME.size : end]
        if zlib.crc32(body) != crc:
            break
        try:
            rec = decode_record(body)
        except CorruptFileError:
            break
        if rec.seq <= last_seq:
            break
        last_seq = rec.seq
        records.append(rec)
        pos = end
    return records, pos


# -- snapshots -------------------------------------------------------------------


def encode_snapshot(engine, last_seq: int) -> bytes:
    out = [SNAP_MAGIC, _U16.pack(FORMAT), _U64.pack(last_seq)]
    state = engine.registry.to_state()
    out.append(_U32.pack(len(state)))
    for records in state:
        out.append(_U32.pack(len(records)))
        for prefix, version, names in records:
            out += [_blob(prefix), _U32.pack(version), _U32.pack(len(names))]
            out += [_text(n) for n in names]
    programs = engine.transformers.programs
    out.append(_U32.pack(len(programs)))
    for name, prog in programs.items():
        out += [_text(name), _text(prog.to_text())]
    native_names = sorted(
        {n for recs in state for _, _, names in recs for n in names} - set(programs)
    )
    out.append(_U32.pack(len(native_names)))
    out += [_text(n) for n in native_names]
    items = sorted(engine.store.items())
    out.append(_U64.pack(len(items)))
    for key, entry in items:
        out += [
            _blob(key), _U8.pack(KIND_CODES[entry.payload.KIND]),
            _blob(encode_payload(entry.payload)), _U32.pack(entry.version),
        ]
    data = b"".join(out)
    return data + _U32.pack(zlib.crc32(data))


@dataclass
class SnapshotImage:
    last_seq: int
    registry_state: list
    programs: dict[str, Program]
    native_names: list[str]
    entries: list[tuple[bytes, object, int]]


def decode_snapshot(data: bytes) -> SnapshotImage:
    if len(data) < 4 + 2 + 8 + 4 or data[:4] != SNAP_MAGIC:
        raise CorruptFileError("not a snapshot file")
    (crc,) = _U32.unpack_from(data, len(data) - 4)
    if zlib.crc32(data[:-4]) != crc:
        raise CorruptFileError("snapshot checksum mismatch")
    r = _Reader(data[:-4], 4)
    (fmt,) = _U16.unpack(r.take(2))
    if fmt != FORMAT:
        raise CorruptFileError(f"unsupported snapshot format {fmt}")
    last_seq = r.u64()
    state = []
    for _ in range(r.u32()):
        recs = []
        for _ in range(r.u32()):
            prefix = r.blob()
            version = r.u32()
            names = tuple(r.text() for _ in range(r.u32()))
            recs.append((prefix, version, names))
        state.append(recs)
    programs = {}
    for _ in range(r.u32()):
        name = r.text()
        programs[name] = parse_program(r.text())
    natives = [r.text() for _ in range(r.u32())]
    entries = []
    for _ in range(r.u64()):
        key = r.blob()
        code = r.u8()
        payload = decode_payload(CODE_KINDS[code], r.blob())
        entries.append((key, payload, r.u32()))
    if r.pos != len(r.data):
        raise CorruptFileError("trailing bytes in snapshot")
    return SnapshotImage(last_seq, state, programs, natives, entries)


def apply_ops(store, ops) -> None:
    for op in ops:
        if op[0] == "w":
            store.raw_set(op[1], op[2], op[3])
        else:
            store.raw_delete(op[1])


# -- the durable journal -------------------------------------------------------


class Persistence:
    """Durability for one engine; installed as ``engine.journal`` by ``recover``."""

    def __init__(self, data_dir: str | os.PathLike, *, flush_every: int = 1, fsync: bool = False):
        self.dir = Path(data_dir)
        self.dir.mkdir(parents=True, exist_ok=True)
        self.log_path = self.dir / "lazykv.log"
        self.snap_path = self.dir / "lazykv.snap"
        self.flush_every = max(1, int(flush_every))
        self.fsync = fsync
        self.seq = 0
        self._pending = 0
        self._log: io.BufferedWriter | None = None
        self.degraded: set[str] = set()

    # -- recovery --------------------------------------------------------

    def recover(self, engine) -> "Persistence":
        """Load snapshot and log into ``engine`` (which must be fresh)."""
        last_seq = 0
        if self.snap_path.exists():
            image = decode_snapshot(self.snap_path.read_bytes())
            last_seq = image.last_seq
            engine.adopt_registry(Registry.from_state(image.registry_state))
            engine.transformers.programs.update(image.programs)
            for key, payload, tag in image.entries:
                engine.store.raw_set(key, payload, tag)
        records: list[LogRecord] = []
        if self.log_path.exists():
            data = self.log_path.read_bytes()
            records, good = read_log(data)
            if good < len(data):
                with open(self.log_path, "r+b") as f:
                    f.truncate(good)
        for rec in records:
            if rec.seq <= last_seq:
                continue
            if rec.kind == BATCH or rec.kind in (DATA_WRITE, DATA_DELETE):
                apply_ops(engine.store, rec.ops)
            elif rec.kind == INSTALL:
                engine.replay_install(rec.spec, rec.programs)
            elif rec.kind == DECLARE:
                engine.replay_declare(rec.ops)
        self.seq = max([last_seq] + [r.seq for r in records])
        self.degraded = {
            n
            for chain in engine.registry.chains.values()
            for r in chain.records
            for n in r.transformers
            if not engine.transformers.knows(n)
        }
        self._open_log(fresh=not self.log_path.exists() or self.log_path.stat().st_size == 0)
        engine.journal = self
        return self

    def _open_log(self, fresh: bool) -> None:
        self._log = open(self.log_path, "ab")
        if fresh:
            self._log.write(_LOG_HEADER)
            self._sync(force=True)

    # -- appends ---------------------------------------------------------

    def _sync(self, force: bool = False) -> None:
        assert self._log is not None
        self._log.flush()
        if force or self.fsync:
            os.fsync(self._log.fileno())

    def _append(self, rec: LogRecord, *, durable: bool) -> int:
        assert self._log is not None, "recover() must run first"
        self._log.write(encode_record(rec))
        self._pending += 1
        if durable:
            self._sync(force=True)
            self._pending = 0
        elif self._pending >= self.flush_every:
            self._sync()
            self._pending = 0
        return rec.seq

    def _next(self) -> int:
        self.seq += 1
        return self.seq

    def append_batch(self, ops: list) -> int:
        return self._append(LogRecord(self._next(), BATCH, list(ops)), durable=False)

    def append_install(self, spec: UpdateSpec, programs: dict[str, Program]) -> int:
        rec = LogRecord(self._next(), INSTALL, spec=spec, programs=dict(programs))
        try:
            return self._append(rec, durable=True)
        except OSError:
            self.seq -= 1
            raise

    def append_declare(self, pairs: list) -> int:
        return self._append(LogRecord(self._next(), DECLARE, list(pairs)), durable=False)

    def flush(self) -> None:
        if self._log is not None:
            self._sync()
            self._pending = 0

    # -- snapshots -------------------------------------------------------

    def snapshot(self, engine) -> Path:
        self.flush()
        data = encode_snapshot(engine, self.seq)
        tmp = self.snap_path.with_suffix(".tmp")
        with open(tmp, "wb") as f:
            f.write(data)
            f.flush()
            os.fsync(f.fileno())
        os.replace(tmp, self.snap_path)
        assert self._log is not None
        self._log.close()
        with open(self.log_path, "wb") as f:
            f.write(_LOG_HEADER + encode_record(LogRecord(self._next(), SNAPSHOT_MARK)))
            f.flush()
            os.fsync(f.fileno())
        self._open_log(fresh=False)
        return self.snap_path

    def close(self) -> None:
        if self._log is not None:
            self._sync()
            self._log.close()
            self._log = None
