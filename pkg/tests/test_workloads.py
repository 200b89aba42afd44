import random
import zlib

import pytest

from lazykv.bench.harness import BenchConfig, BenchResult, TimelineSample, populate, run_bench, summary_line
from lazykv.bench.stats import median, siqr
from lazykv.bench.workloads import NEW, OLD, Amico, RedisFS, Uniform, make_workload
from lazykv.client import Client
from lazykv.engine import Engine
from lazykv.protocol import Error
from lazykv.server import ServerConfig, ServerThread


@pytest.fixture
def served():
    eng = Engine()
    with ServerThread(ServerConfig(port=0), engine=eng) as srv:
        yield eng, srv.address


@pytest.mark.parametrize("dirs, files, keys", [(251, 10_000, 123_002), (1, 1, 14), (26, 1000, 12_302)])
def test_redisfs_key_formula(dirs, files, keys):
    w = RedisFS(n_dirs=dirs, n_files=files)
    assert w.key_count() == keys
    assert w.stale_key_count() == dirs + 10 * (dirs - 1 + files) + files


def test_redisfs_populate_matches_count_and_update_roundtrips(served):
    eng, (host, port) = served
    w = RedisFS(n_dirs=4, n_files=30)
    with Client(host, port, prefixes=w.hello_pairs(OLD)) as c:
        populate(c, w)
        assert len(eng.logical_items()) == w.key_count()
        c.upgrade(w.update_spec())
    with Client(host, port, prefixes=w.hello_pairs(NEW)) as c:
        for p in w.migrate_prefixes():
            c.migrate(p)
        for ino in w.objects:
            if not ino.is_dir:
                stored = c.get(w.node_key(ino.ino, "DATA"))
                assert stored == w.expected_data(ino, NEW)
                assert zlib.decompress(stored) == ino.data
            assert c.get(w.node_key(ino.ino, "NAME")) == ino.path.rsplit("/", 1)[1].encode()
            assert c.execute("SMEMBERS", w.dir_key(w.inodes[ino.parent - 1].path, NEW))
    keys = eng.logical_items()
    assert len(keys) == w.key_count()
    assert not any(k.startswith(b"skx:/") for k in keys)


def test_redisfs_ops_touch_whole_inode():
    w = RedisFS(n_dirs=3, n_files=10)
    cmds = w.next_op(random.Random(1), NEW)
    assert cmds[0][0] == "GET" and cmds[0][1].startswith("skx:PATH:")
    assert all(c[1].startswith("skx:DIR:/") for c in cmds if c[0] == "SMEMBERS")
    assert sum(c[0] == "GET" for c in cmds) >= 11


def test_redisfs_coverage_visits_every_object_once_before_exhaustion():
    w = RedisFS(n_dirs=3, n_files=40)
    rng = random.Random(2)
    draws = 0
    while not w.exhausted():
        w.next_op(rng, NEW)
        draws += 1
        assert draws < 100_000
    # uniform sampling with replacement needs about n*H(n) draws; the
    # expected-rate selection must not be faster than one new object per draw
    assert draws > len(w.objects)


def test_amico_queries_equal_before_and_after_rename(served):
    eng, (host, port) = served
    w = Amico(n_edges=2000)
    with Client(host, port, prefixes=w.hello_pairs(OLD)) as c:
        populate(c, w)
        before = [c.execute("ZSCORE", w.key(r, o, OLD), str(m)) for r, o, m in w.queries()]
        assert any(b is not None for b in before) and any(b is None for b in before)
        c.upgrade(w.update_spec())
    with Client(host, port, prefixes=w.hello_pairs(NEW)) as c:
        after = [c.execute("ZSCORE", w.key(r, o, NEW), str(m)) for r, o, m in w.queries()]
        assert after == before
        for p in w.migrate_prefixes():
            c.migrate(p)
    keys = eng.logical_items()
    assert len(keys) == w.key_count() == w.stale_key_count()
    assert all(b":default:" in k for k in keys)


def test_amico_default_size_is_about_fifty_thousand_keys():
    assert 45_000 <= Amico().key_count() <= 55_000


def test_make_workload_aliases():
    assert isinstance(make_workload("redisfs-like", n_dirs=2, n_files=2), RedisFS)
    assert isinstance(make_workload("amico-like", n_edges=10), Amico)
    assert isinstance(make_workload("uniform", key_count=3), Uniform)
    with pytest.raises(ValueError):
        Uniform(key_count=0)
    with pytest.raises(ValueError):
        RedisFS(n_dirs=0)


@pytest.mark.parametrize("kw", [
    {"update_at": 5.0, "duration": 5.0},
    {"key_count": 0},
    {"mode": "sideways"},
])
def test_bench_config_validation(kw):
    with pytest.raises(ValueError):
        BenchConfig(**kw)


def test_stats_helpers():
    assert median([3, 1, 2]) == 2
    assert siqr([5]) == 0.0
    assert siqr([1, 2, 3, 4, 5]) == 1.0
    assert summary_line([10.0, 20.0, 30.0]) == "pause_ms=30.0 trials=3 median=20.0 siqr=5.0"


def test_csv_format():
    r = BenchResult(BenchConfig(), [TimelineSample(0, 100, 0, False), TimelineSample(1, 50, 7, True)],
                    rtt_ms=0.25, install_second=1)
    assert r.csv().splitlines() == [
        "# workload=uniform mode=lazy rtt_ms=0.250 install_second=1",
        "second,qps,lazy_per_sec,paused",
        "0,100,0,0",
        "1,50,7,1",
    ]


def test_lazy_and_eager_bench_runs(served):
    _, (host, port) = served
    cfg = BenchConfig(workload="amico", n_edges=400, duration=2.0, update_at=0.5, mode="lazy", clients=2)
    lazy = run_bench(cfg, host, port)
    assert lazy.install_second == 0 and lazy.unavailable_ms is not None
    assert lazy.lazy_total > 0 and not any(s.paused for s in lazy.timeline)
    assert lazy.stats["installs"] == 1


def test_eager_bench_pauses_and_flushes():
    eng = Engine()
    with ServerThread(ServerConfig(port=0), engine=eng) as srv:
        cfg = BenchConfig(workload="amico", n_edges=400, duration=2.0, update_at=0.5, mode="eager", clients=2)
        w = cfg.build_workload()
        result = run_bench(cfg, *srv.address, workload=w)
        assert result.pause_ms is not None and result.pause_ms > 0
        assert any(s.paused for s in result.timeline)
        assert result.lazy_total == 0
        # clients also create sets before the update, so the flush can move more
        assert result.stats["eager_migrations"] >= w.stale_key_count()
        assert all(b":default:" in k for k in eng.logical_items())
