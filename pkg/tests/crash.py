"""Crash injection by log truncation.

A recorded run keeps the log image plus, for every command boundary, the
logical digest and the registry state a crash-free execution would have
there. Truncating the log anywhere must recover to one of those boundaries.
"""

from __future__ import annotations

import random
import shutil
from dataclasses import dataclass
from pathlib import Path

from lazykv.core import logical_digest
from lazykv.engine import Engine
from lazykv.persistence import _FRAME, _LOG_HEADER, INSTALL, Persistence, decode_record

from traces import TraceState, generate_step, make_engine, make_model, make_transformers, run_step


def registry_state(eng: Engine) -> tuple:
    return tuple(sorted(tuple(c) for c in eng.registry.to_state()))


@dataclass
class Frame:
    start: int
    end: int
    kind: int
    migrates: bool


@dataclass
class Recording:
    log: bytes
    boundaries: list[tuple[str, tuple]]  # (digest, registry state) at each step boundary
    frames: list[Frame]
    snapshot: bytes | None = None
    log_before_snapshot: bytes | None = None


def record(workdir: Path, seed: int, length: int = 120, snapshot_at: int | None = None) -> Recording:
    rng = random.Random(seed)
    p = Persistence(workdir)
    boundaries = [(logical_digest({}), ())]
    eng = make_engine(p)
    st = TraceState(make_model())
    install_at = rng.randrange(length // 4, 3 * length // 4)
    boundaries.append((logical_digest(eng.logical_items()), registry_state(eng)))
    snap = old_log = None
    for i in range(length):
        if i == snapshot_at:
            p.flush()
            old_log = p.log_path.read_bytes()
            p.snapshot(eng)
            snap = p.snap_path.read_bytes()
        step = generate_step(rng, st, i == install_at)
        run_step(eng, st, step)
        boundaries.append((logical_digest(eng.logical_items()), registry_state(eng)))
    p.close()
    log = p.log_path.read_bytes()
    return Recording(log, boundaries, _frames(log), snap, old_log)


def _frames(log: bytes) -> list[Frame]:
    out = []
    pos = len(_LOG_HEADER)
    while pos < len(log):
        length, _ = _FRAME.unpack_from(log, pos)
        end = pos + _FRAME.size + length
        rec = decode_record(log[pos + _FRAME.size : end])
        deletes = sum(1 for op in rec.ops if op[0] == "d")
        writes = sum(1 for op in rec.ops if op[0] == "w")
        out.append(Frame(pos, end, rec.kind, deletes > 0 and writes > 0))
        pos = end
    return out


def crash_points(rec: Recording) -> list[tuple[int, str]]:
    """Truncation offsets and the phase each one models."""
    install = next((i for i, f in enumerate(rec.frames) if f.kind == INSTALL), -1)
    points = []
    for i, f in enumerate(rec.frames):
        if i < install:
            phase = "before-install"
        elif i == install:
            phase = "mid-install-flush"
        else:
            phase = "mid-lazy-migration" if f.migrates else "after-install"
        points.append((f.start, "before-install" if i <= install else phase))
        points.append(((f.start + f.end) // 2, phase))
    points.append((len(rec.log), "after-install"))
    return points


def recover_at(rec: Recording, cut: int, workdir: Path, log: bytes | None = None) -> tuple[str, tuple]:
    """Recover from the first ``cut`` bytes of the log (of ``log`` if given)."""
    if workdir.exists():
        shutil.rmtree(workdir)
    workdir.mkdir(parents=True)
    if rec.snapshot is not None:
        (workdir / "lazykv.snap").write_bytes(rec.snapshot)
    (workdir / "lazykv.log").write_bytes((rec.log if log is None else log)[:cut])
    eng = Engine(transformers=make_transformers())
    p = Persistence(workdir).recover(eng)
    state = registry_state(eng)
    eng.eager_migrate_all()
    p.close()
    return eng.store.digest(with_tags=False), state
