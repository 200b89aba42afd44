"""Starting server subprocesses for benchmarks."""

from __future__ import annotations

import os
import subprocess
import sys
import time

from ..client import Client


class ServerProcess:
    """``python -m lazykv server --port 0`` in a child process."""

    def __init__(self, *flags: str, startup_timeout: float = 20.0):
        env = dict(os.environ)
        src = os.path.dirname(os.path.dirname(os.path.dirname(os.path.abspath(__file__))))
        env["PYTHONPATH"] = src + os.pathsep + env.get("PYTHONPATH", "")
        self.proc = subprocess.Popen(
            [sys.executable, "-m", "lazykv", "server", "--port", "0", *flags],
            stdout=subprocess.PIPE,
            stderr=subprocess.DEVNULL,
            text=True,
            env=env,
        )
        deadline = time.monotonic() + startup_timeout
        line = ""
        while time.monotonic() < deadline:
            line = self.proc.stdout.readline()  # type: ignore[union-attr]
            if line.startswith("listening") or not line:
                break
        if not line.startswith("listening"):
            self.proc.kill()
            raise RuntimeError("server did not start")
        _, host, port = line.split()
        self.host, self.port = host, int(port)

    def client(self, **kw) -> Client:
        return Client(self.host, self.port, **kw)

    def rss_bytes(self) -> int:
        import psutil

        return psutil.Process(self.proc.pid).memory_info().rss

    def stop(self) -> None:
        if self.proc.poll() is None:
            try:
                with self.client() as c:
                    c.send_raw(b"SHUTDOWN\r\n")
                    c.read_replies(1)
            except Exception:
                pass
            try:
                self.proc.wait(10)
            except subprocess.TimeoutExpired:
                self.proc.kill()
                self.proc.wait()

    def __enter__(self) -> "ServerProcess":
        return self

    def __exit__(self, *exc) -> None:
        self.stop()
