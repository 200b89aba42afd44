"""Acceptance criteria 1 to 9. Each test records one ``criterion N: PASS|FAIL``
line, printed together in the terminal summary, and then asserts the result.

The full set takes roughly a quarter of an hour on one core, most of it in
the steady-state overhead trials and the redisfs lazy run.
"""

from __future__ import annotations

import json
import statistics
from decimal import Decimal

import pytest

from lazykv.bench.harness import BenchConfig, run_bench
from lazykv.bench.memory import measure_memory
from lazykv.bench.overhead import measure_overhead
from lazykv.bench.procs import ServerProcess
from lazykv.bench.workloads import Amico, RedisFS
from lazykv.core import Str
from lazykv.transform import Transformer, apply, fig1_transform

import crash
from conftest import ACCEPTANCE_LINES
from nonatomic import anomalies
from test_atomicity import B_VALUE, KEY, engine_store, split_store
from test_transform import FIG1_AFTER, FIG1_BEFORE
from traces import run_trace

pytestmark = pytest.mark.acceptance


def report(n: int, ok: bool, detail: str) -> None:
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'} {detail}"
    print(line)
    ACCEPTANCE_LINES.append(line)
    assert ok, line


def test_criterion_1_trace_equivalence():
    outcomes = [run_trace(seed, length=500, max_installs=3) for seed in range(1000)]
    bad = [o for o in outcomes if o.mismatch is not None]
    installs = {o.installs for o in outcomes}
    report(1, not bad and installs == {1, 2, 3},
           f"traces=1000 commands=500 install_counts={sorted(installs)} mismatches={len(bad)}"
           + (f" first={bad[0].seed}:{bad[0].mismatch}" if bad else ""))


def test_criterion_2_atomicity_anomaly():
    ref = anomalies(split_store, KEY, B_VALUE)
    eng = anomalies(engine_store, KEY, B_VALUE)
    report(2, bool(ref) and not eng,
           f"reference_anomalies={len(ref)} engine_anomalies={len(eng)}")


def test_criterion_3_steady_state_overhead():
    r = measure_overhead(keys=100_000, ops=1_000_000, trials=11)
    report(3, r.median_overhead <= 0.10, r.summary())


def test_criterion_4_memory_overhead():
    r = measure_memory(keys=1_000_000, prefixes=5)
    report(4, r.total_overhead <= 0.25, r.summary())


def _amico_run(mode: str):
    w = Amico()
    cfg = BenchConfig(workload="amico", duration=6.0, update_at=2.0, mode=mode, clients=4)
    with ServerProcess() as proc:
        return run_bench(cfg, proc.host, proc.port, workload=w), w


def test_criterion_5_pause_gap():
    eager, w = _amico_run("eager")
    lazy, _ = _amico_run("lazy")
    ratio = eager.pause_ms / lazy.unavailable_ms
    report(5, ratio >= 100 and lazy.unavailable_ms <= 50 and 45_000 <= w.key_count() <= 55_000,
           f"keys={w.key_count()} eager_pause_ms={eager.pause_ms:.1f} "
           f"lazy_unavailable_ms={lazy.unavailable_ms:.2f} ratio={ratio:.0f}")


@pytest.fixture(scope="module")
def redisfs_lazy_run():
    w = RedisFS(n_dirs=251, n_files=10_000)
    cfg = BenchConfig(workload="redisfs", n_dirs=251, n_files=10_000, duration=150.0,
                      update_at=3.0, mode="lazy", clients=2, rate=len(w.objects) / 5,
                      stop_when_migrated=True)
    with ServerProcess("--track-edges") as proc:
        result = run_bench(cfg, proc.host, proc.port, workload=w)
    return result, w


def curve_shape(result) -> tuple[int, list[float], int]:
    """(second of the lazy peak, 10-second means from the install on, exhaustion second)."""
    rates = [s.lazy_per_sec for s in result.timeline]
    peak = max(range(len(rates)), key=rates.__getitem__)
    start = result.install_second
    end = max(i for i, r in enumerate(rates) if r > 0) + 1
    windows = [statistics.fmean(rates[i:i + 10]) for i in range(start, end, 10) if end - i >= 10]
    return peak, windows, end


def test_criterion_6_lazy_curve(redisfs_lazy_run):
    result, w = redisfs_lazy_run
    peak, windows, end = curve_shape(result)
    decreasing = all(a >= b for a, b in zip(windows, windows[1:]))
    exact = result.lazy_total == w.stale_key_count()
    report(6, abs(peak - result.install_second) <= 2 and decreasing and exact,
           f"install_s={result.install_second} peak_s={peak} exhausted_s={end} "
           f"window_means={[round(x) for x in windows]} lazy_total={result.lazy_total} "
           f"stale_keys={w.stale_key_count()}")


def test_criterion_7_crash_recovery(tmp_path):
    points = 0
    phases: dict[str, int] = {}
    failures = []
    runs = [(seed, None) for seed in range(4)] + [(seed, 40) for seed in range(10, 12)]
    for seed, snap in runs:
        rec = crash.record(tmp_path / f"run{seed}", seed=seed, length=120, snapshot_at=snap)
        states = set(rec.boundaries)
        for cut, phase in crash.crash_points(rec):
            points += 1
            phases[phase] = phases.get(phase, 0) + 1
            if crash.recover_at(rec, cut, tmp_path / "rec") not in states:
                failures.append((seed, cut, phase))
    want = {"before-install", "mid-install-flush", "after-install", "mid-lazy-migration"}
    report(7, points >= 200 and not failures and set(phases) == want,
           f"points={points} phases={dict(sorted(phases.items()))} failures={len(failures)}")


def test_criterion_8_golden_document():
    direct = apply(Transformer("fig1_transform", program=fig1_transform), b"order:1", Str(FIG1_BEFORE))
    with ServerProcess() as proc:
        with proc.client(prefixes={"order": 0}) as c:
            c.set("order:1", FIG1_BEFORE)
            c.upgrade("program fig1_transform { foreach order/orderItems { rename price fullPrice; "
                      "add discountedPrice = fullPrice - 3.0; } }\n"
                      "change order order 0 1 fig1_transform\n")
        with proc.client(prefixes={"order": 1}) as c:
            served = c.get("order:1")
    item = json.loads(served, parse_float=Decimal)["order"]["orderItems"][0]
    ok = direct == Str(FIG1_AFTER) and served == FIG1_AFTER and item["fullPrice"] == Decimal("19.99") \
        and item["discountedPrice"] == Decimal("16.99")
    report(8, ok, f"served={served.decode()}")


def test_criterion_9_at_most_once(redisfs_lazy_run):
    result, _ = redisfs_lazy_run
    worst = result.stats["max_edge_transforms"]
    report(9, worst <= 1 and result.lazy_total > 0, f"max_edge_transforms={worst}")
