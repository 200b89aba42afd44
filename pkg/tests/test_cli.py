import io
import sys

import pytest

from lazykv.cli import main
from lazykv.client import format_reply
from lazykv.protocol import Error, Status
from lazykv.server import ServerConfig, ServerThread

from test_engine import ORDER_SPEC
from test_transform import FIG1_AFTER, FIG1_BEFORE


@pytest.fixture
def server():
    with ServerThread(ServerConfig(port=0)) as srv:
        yield srv


def run_cli(srv, *args, stdin=None, monkeypatch=None):
    port = str(srv.address[1])
    if stdin is not None:
        monkeypatch.setattr(sys, "stdin", io.StringIO(stdin))
    return main(["cli", "--port", port, *args])


def test_set_then_get_echoes_json(server, capsys, tmp_path):
    doc = tmp_path / "order.json"
    doc.write_bytes(FIG1_BEFORE)
    assert run_cli(server, "--declare", "order", "0", "SET", "order:1", f"@{doc}") == 0
    assert run_cli(server, "--declare", "order", "0", "GET", "order:1") == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0] == "OK"
    assert out[1] == repr(FIG1_BEFORE.decode())


def test_upgrade_from_file_and_stats(server, capsys, tmp_path, monkeypatch):
    spec = tmp_path / "order_v1.kvu"
    spec.write_text(ORDER_SPEC)
    doc = tmp_path / "order.json"
    doc.write_bytes(FIG1_BEFORE)
    script = f"SET order:7 @{doc}\n# comment\n\nUPGRADE @{spec}\nPING\n"
    run_cli(server, "--declare", "order", "0", stdin=script, monkeypatch=monkeypatch)
    out = capsys.readouterr().out
    # the upgrade retires the session's own declaration, so it is closed
    assert "OK DISCONNECTED 1" in out
    assert "GOAWAY" in out
    assert "PONG" not in out
    assert run_cli(server, stdin="STATS\nquit\nPING\n", monkeypatch=monkeypatch) == 0
    out = capsys.readouterr().out
    assert "installs" in out and "PONG" not in out
    assert run_cli(server, "--declare", "order", "1", "GET", "order:7") == 0
    assert capsys.readouterr().out.strip() == repr(FIG1_AFTER.decode())


def test_errors_print_and_continue(server, capsys, monkeypatch):
    assert run_cli(server, stdin="GET\nBOGUS x\nGET @/nonexistent\nPING\n", monkeypatch=monkeypatch) == 0
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("(error) ERR wrong number")
    assert out[1].startswith("(error) ERR unknown command")
    assert out[2].startswith("(error)")
    assert out[3] == "PONG"


def test_mismatch_exits_nonzero(server, capsys):
    run_cli(server, "UPGRADE", "change p p 0 1\n")
    assert run_cli(server, "--declare", "p", "0", "PING") == 1
    assert "MISMATCH p 1" in capsys.readouterr().err


def test_unreachable_server(capsys):
    assert main(["cli", "--port", "1", "PING"]) == 1


def test_format_reply():
    assert format_reply(None) == "(nil)"
    assert format_reply(3) == "(integer) 3"
    assert format_reply(Status("OK")) == "OK"
    assert format_reply(Error("ERR x")) == "(error) ERR x"
    assert format_reply([b"a", [b"b"]]) == "1) 'a'\n2) 1) 'b'"
    assert format_reply([]) == "(empty array)"


def test_server_subcommand_process():
    from lazykv.bench.procs import ServerProcess

    with ServerProcess("--sentinel") as proc:
        with proc.client(prefixes={"x": 0}) as c:
            assert c.ping() == "PONG"
        assert proc.rss_bytes() > 0


def test_bench_subcommand_without_update(capsys):
    code = main([
        "bench", "--spawn", "--workload", "uniform", "--key-count", "200",
        "--duration", "2", "--update-at", "-1", "--clients", "2",
    ])
    assert code == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0].startswith("# workload=uniform mode=lazy")
    assert lines[1] == "second,qps,lazy_per_sec,paused"
    rows = [line.split(",") for line in lines[2:-1]]
    assert len(rows) == 2
    assert all(int(r[1]) > 0 and r[2] == "0" and r[3] == "0" for r in rows)
    assert lines[-1].startswith("pause_ms=0.0 trials=1 median=0.0 siqr=0.0")
