"""Eager-vs-lazy benchmark driver.

Client threads run the workload against a server. At ``update_at`` seconds
the harness either installs the update and lets clients reconnect at the
new version (lazy), or stops the clients, installs, and runs ``MIGRATE``
over every affected prefix before restarting them (eager). A sampler reads
``STATS`` once a second and produces the timeline.
"""

from __future__ import annotations

import argparse
import csv
import io
import random
import sys
import threading
import time
from dataclasses import dataclass, field

from ..client import Client
from ..errors import Disconnected, ReplyError
from ..protocol import Error, encode_command
from .stats import median, siqr
from .workloads import NEW, OLD, Workload, make_workload


@dataclass
class BenchConfig:
    workload: str = "uniform"
    key_count: int = 10_000
    value_size: tuple[int, int] = (10, 10)
    duration: float = 30.0
    update_at: float | None = 10.0
    mode: str = "lazy"
    clients: int = 4
    pipeline_depth: int = 1
    # workload-specific sizes
    n_dirs: int = 26
    n_files: int = 1000
    n_edges: int = 68_000
    # operations (command groups) per second across all clients; None = flat out
    rate: float | None = None
    stop_when_migrated: bool = False
    trials: int = 1
    seed: int = 1

    def __post_init__(self) -> None:
        if self.update_at is not None and self.update_at >= self.duration:
            raise ValueError("update_at must be before the end of the run")
        if self.key_count < 1:
            raise ValueError("key_count must be at least 1")
        if self.mode not in ("lazy", "eager"):
            raise ValueError("mode must be lazy or eager")

    def build_workload(self) -> Workload:
        if self.workload.startswith("redisfs"):
            return make_workload("redisfs", n_dirs=self.n_dirs, n_files=self.n_files)
        if self.workload.startswith("amico"):
            return make_workload("amico", n_edges=self.n_edges)
        return make_workload("uniform", key_count=self.key_count, value_size=self.value_size)


@dataclass
class TimelineSample:
    second: int
    qps: int
    lazy_per_sec: int
    paused: bool


@dataclass
class BenchResult:
    config: BenchConfig
    timeline: list[TimelineSample]
    rtt_ms: float
    install_second: int | None = None
    pause_ms: float | None = None
    unavailable_ms: float | None = None
    lazy_total: int = 0
    stale_keys: int = 0
    stats: dict = field(default_factory=dict)

    def csv(self) -> str:
        out = io.StringIO()
        out.write(
            f"# workload={self.config.workload} mode={self.config.mode} "
            f"rtt_ms={self.rtt_ms:.3f} install_second={self.install_second}\n"
        )
        w = csv.writer(out, lineterminator="\n")
        w.writerow(["second", "qps", "lazy_per_sec", "paused"])
        for s in self.timeline:
            w.writerow([s.second, s.qps, s.lazy_per_sec, int(s.paused)])
        return out.getvalue()


def summary_line(pause_ms: list[float]) -> str:
    return (
        f"pause_ms={pause_ms[-1]:.1f} trials={len(pause_ms)} "
        f"median={median(pause_ms):.1f} siqr={siqr(pause_ms):.1f}"
    )


def populate(client: Client, workload: Workload, batch: int = 500) -> int:
    n = 0
    buf: list[bytes] = []
    for cmd in workload.populate():
        buf.append(encode_command(cmd))
        if len(buf) >= batch:
            n += _flush(client, buf)
    n += _flush(client, buf)
    return n


def _flush(client: Client, buf: list[bytes]) -> int:
    if not buf:
        return 0
    client.send_raw(b"".join(buf))
    replies = client.read_replies(len(buf))
    for r in replies:
        if isinstance(r, Error):
            raise ReplyError(r.line)
    n = len(buf)
    buf.clear()
    return n


def measure_rtt(client: Client, n: int = 200) -> float:
    t0 = time.perf_counter()
    for _ in range(n):
        client.execute("PING")
    return (time.perf_counter() - t0) / n * 1000


class _Run:
    def __init__(self, cfg: BenchConfig, workload: Workload, host: str, port: int, auth: str | None):
        self.cfg = cfg
        self.w = workload
        self.addr = (host, port)
        self.auth = auth
        self.phase = OLD
        self.stop = threading.Event()
        self.running = threading.Event()
        self.running.set()
        self.ops = 0
        self.ops_lock = threading.Lock()
        self.idle = threading.Semaphore(0)
        self.errors: list[str] = []
        self.wlock = threading.Lock()
        self._next_slot = time.perf_counter()

    def _connect(self) -> Client:
        while True:
            try:
                return Client(*self.addr, prefixes=self.w.hello_pairs(self.phase))
            except ReplyError as exc:
                if exc.code != "MISMATCH":
                    raise
                time.sleep(0.001)  # declared just before an install; retry at the new version

    def _pace(self) -> None:
        if self.cfg.rate is None:
            return
        with self.ops_lock:
            slot = self._next_slot = max(self._next_slot + 1.0 / self.cfg.rate, time.perf_counter() - 0.05)
        delay = slot - time.perf_counter()
        if delay > 0:
            time.sleep(delay)

    def worker(self, idx: int) -> None:
        rng = random.Random(self.cfg.seed * 1000 + idx)
        client = self._connect()
        try:
            while not self.stop.is_set():
                if not self.running.is_set():
                    self.idle.release()
                    self.running.wait()
                    continue
                self._pace()
                if self.stop.is_set():
                    break
                with self.wlock:
                    phase = self.phase
                    group = [
                        cmd
                        for _ in range(max(1, self.cfg.pipeline_depth))
                        for cmd in self.w.next_op(rng, phase)
                    ]
                try:
                    replies = client.pipeline(group)
                except Disconnected:
                    client = self._connect()
                    continue
                bad = [r for r in replies if isinstance(r, Error)]
                if bad:
                    self.errors.append(bad[0].line)
                with self.ops_lock:
                    self.ops += len(group)
        finally:
            client.close()


def run_bench(config: BenchConfig, host: str, port: int, *, auth: str | None = None,
              workload: Workload | None = None, populate_first: bool = True) -> BenchResult:
    """One trial against a running server (fresh server per trial recommended)."""
    cfg = config
    w = workload or cfg.build_workload()
    admin = Client(host, port, auth=auth)
    if populate_first:
        loader = Client(host, port, prefixes=w.hello_pairs(OLD))
        populate(loader, w)
        loader.close()
    rtt = measure_rtt(admin)
    run = _Run(cfg, w, host, port, auth)
    threads = [threading.Thread(target=run.worker, args=(i,), daemon=True) for i in range(cfg.clients)]
    base = admin.stats()["lazy_migrations"]
    timeline: list[TimelineSample] = []
    result = BenchResult(cfg, timeline, rtt, stale_keys=w.stale_key_count())
    t0 = time.perf_counter()
    for t in threads:
        t.start()
    last_ops, last_lazy = 0, base
    second = 0
    paused_this_second = False
    updated = False
    while True:
        second += 1
        target = t0 + second
        while True:
            now = time.perf_counter()
            if not updated and cfg.update_at is not None and now - t0 >= cfg.update_at:
                updated = True
                result.install_second = int(now - t0)
                paused_this_second = _install(cfg, w, admin, run, result) or paused_this_second
                continue
            if now >= target:
                break
            time.sleep(min(0.05, target - now))
        lazy = admin.stats()["lazy_migrations"]
        with run.ops_lock:
            ops = run.ops
        timeline.append(TimelineSample(second - 1, ops - last_ops, lazy - last_lazy, paused_this_second))
        paused_this_second = False
        last_ops, last_lazy = ops, lazy
        if time.perf_counter() - t0 >= cfg.duration:
            break
        if cfg.stop_when_migrated and updated and lazy - base >= result.stale_keys:
            break
    run.stop.set()
    run.running.set()
    for t in threads:
        t.join(10)
    result.lazy_total = admin.stats()["lazy_migrations"] - base
    result.stats = admin.stats()
    admin.close()
    if run.errors:
        raise RuntimeError(f"workload saw errors, first: {run.errors[0]}")
    return result


def _install(cfg: BenchConfig, w: Workload, admin: Client, run: _Run, result: BenchResult) -> bool:
    spec = w.update_spec()
    if spec is None:
        return False
    if cfg.mode == "lazy":
        t = time.perf_counter()
        admin.upgrade(spec)
        result.unavailable_ms = (time.perf_counter() - t) * 1000
        with run.wlock:
            run.phase = NEW
        return False
    t = time.perf_counter()
    run.running.clear()
    for _ in range(cfg.clients):
        if not run.idle.acquire(timeout=30):
            raise RuntimeError("a client did not stop for the eager pause")
    admin.upgrade(spec)
    for p in w.migrate_prefixes():
        admin.migrate(p)
    with run.wlock:
        run.phase = NEW
    run.running.set()
    result.pause_ms = (time.perf_counter() - t) * 1000
    return True


# -- command line ------------------------------------------------------------


def add_bench_arguments(p: argparse.ArgumentParser) -> None:
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=7379)
    p.add_argument("--auth")
    p.add_argument("--workload", default="uniform", choices=["uniform", "redisfs", "amico"])
    p.add_argument("--key-count", type=int, default=10_000)
    p.add_argument("--value-size", type=int, nargs=2, default=(10, 10), metavar=("MIN", "MAX"))
    p.add_argument("--duration", type=float, default=30.0)
    p.add_argument("--update-at", type=float, default=10.0, help="negative: no update")
    p.add_argument("--mode", choices=["lazy", "eager"], default="lazy")
    p.add_argument("--clients", type=int, default=4)
    p.add_argument("--pipeline-depth", type=int, default=1)
    p.add_argument("--n-dirs", type=int, default=26)
    p.add_argument("--n-files", type=int, default=1000)
    p.add_argument("--n-edges", type=int, default=68_000)
    p.add_argument("--rate", type=float, help="operations per second across clients")
    p.add_argument("--stop-when-migrated", action="store_true")
    p.add_argument("--trials", type=int, default=1)
    p.add_argument("--spawn", action="store_true",
                   help="start a private server per trial instead of using --host/--port")
    p.add_argument("--csv", help="write the last trial's timeline here (default stdout)")
    p.set_defaults(fn=cmd_bench)


def cmd_bench(args) -> int:
    cfg = BenchConfig(
        workload=args.workload, key_count=args.key_count, value_size=tuple(args.value_size),
        duration=args.duration, update_at=None if args.update_at < 0 else args.update_at,
        mode=args.mode, clients=args.clients, pipeline_depth=args.pipeline_depth,
        n_dirs=args.n_dirs, n_files=args.n_files, n_edges=args.n_edges, rate=args.rate,
        stop_when_migrated=args.stop_when_migrated, trials=args.trials,
    )
    pauses: list[float] = []
    result = None
    for _ in range(cfg.trials):
        if args.spawn:
            from .procs import ServerProcess

            with ServerProcess() as proc:
                result = run_bench(cfg, proc.host, proc.port)
        else:
            result = run_bench(cfg, args.host, args.port, auth=args.auth)
        value = result.pause_ms if cfg.mode == "eager" else result.unavailable_ms
        pauses.append(value or 0.0)
    assert result is not None
    text = result.csv()
    if args.csv:
        with open(args.csv, "w", encoding="utf-8") as f:
            f.write(text)
    else:
        sys.stdout.write(text)
    print(summary_line(pauses))
    return 0
