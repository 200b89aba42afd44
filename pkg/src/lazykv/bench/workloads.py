"""Synthetic workloads with fixed seeds.

Each workload knows its key population, the update it ships, the prefixes a
client declares before and after that update, and how to draw the next
client operation. Operations are small command groups sent as one pipeline
(a file read touches every key of its inode).
"""

from __future__ import annotations

import random
import zlib
from dataclasses import dataclass, field

OLD, NEW = 0, 1


class Workload:
    name = "abstract"

    def populate(self):
        """Yield commands building the initial (pre-update) population."""
        raise NotImplementedError

    def key_count(self) -> int:
        raise NotImplementedError

    def hello_pairs(self, phase: int) -> list[tuple[str, int]]:
        raise NotImplementedError

    def update_spec(self) -> str | None:
        return None

    def migrate_prefixes(self) -> list[str]:
        """Texts to hand to MIGRATE for an eager flush after the update."""
        return []

    def stale_key_count(self) -> int:
        """Keys the update leaves stale (lazy migrations until exhaustion)."""
        return 0

    def next_op(self, rng: random.Random, phase: int) -> list[list]:
        raise NotImplementedError

    def exhausted(self) -> bool:
        return False


# -- uniform -----------------------------------------------------------------


class Uniform(Workload):
    name = "uniform"

    def __init__(self, key_count: int = 10_000, value_size: tuple[int, int] = (10, 10),
                 prefix: str = "bench", get_ratio: float = 0.5, seed: int = 1):
        if key_count < 1:
            raise ValueError("key_count must be at least 1")
        self.n = key_count
        self.value_size = value_size
        self.prefix = prefix
        self.get_ratio = get_ratio
        self.seed = seed

    def key_count(self) -> int:
        return self.n

    def _value(self, rng: random.Random) -> bytes:
        lo, hi = self.value_size
        return b"x" * rng.randint(lo, hi)

    def populate(self):
        rng = random.Random(self.seed)
        for i in range(self.n):
            yield ["SET", f"{self.prefix}:{i}", self._value(rng)]

    def hello_pairs(self, phase: int) -> list[tuple[str, int]]:
        return [(self.prefix, 0)]

    def next_op(self, rng: random.Random, phase: int) -> list[list]:
        key = f"{self.prefix}:{rng.randrange(self.n)}"
        if rng.random() < self.get_ratio:
            return [["GET", key]]
        return [["SET", key, self._value(rng)]]


# -- redisfs-like ------------------------------------------------------------

NODE_META = ("NAME", "TYPE", "MODE", "UID", "GID", "SIZE", "ATIME", "CTIME", "MTIME", "LINK")
REDISFS_FROM, REDISFS_TO = 5, 6

REDISFS_SPEC = f"""\
# directory keys move under skx:DIR:/ and file data is compressed
change skx:/ skx:DIR:/ {REDISFS_FROM} {REDISFS_TO}
change skx:NODE skx:NODE {REDISFS_FROM} {REDISFS_TO} redisfs_compress_data
"""

_WORDS = (
    b"lorem ipsum dolor sit amet consectetur adipiscing elit sed do eiusmod "
    b"tempor incididunt ut labore et dolore magna aliqua"
).split()


@dataclass
class _Inode:
    ino: int
    path: str
    is_dir: bool
    parent: int | None
    data: bytes = b""
    children: set = field(default_factory=set)


class _Coverage:
    """Low-discrepancy object selection.

    Draws behave like uniform sampling with replacement, except that the
    choice between an object not yet seen and a previously seen one is made
    by accumulating the expected probability (unseen / total) instead of by
    coin flip. New objects therefore appear at the rate uniform sampling
    would produce on average, without the long random tail.
    """

    def __init__(self, n: int, rng: random.Random):
        self.order = list(range(n))
        rng.shuffle(self.order)
        self.n = n
        self.seen = 0
        self.credit = 0.0

    def draw(self, rng: random.Random) -> int:
        unseen = self.n - self.seen
        if unseen:
            self.credit += unseen / self.n
            if self.credit >= 1.0 or self.seen == 0:
                self.credit = max(0.0, self.credit - 1.0)
                self.seen += 1
                return self.order[self.seen - 1]
        return self.order[rng.randrange(self.seen)]

    def done(self) -> bool:
        return self.seen == self.n


class RedisFS(Workload):
    """Directory sets under ``skx:/``, ten metadata keys per inode plus a
    data key per file under ``skx:NODE``, one path key per non-root entry
    under ``skx:PATH`` and the inode counter under ``skx:GLOBAL``."""

    name = "redisfs"

    def __init__(self, n_dirs: int = 26, n_files: int = 1000,
                 value_size: tuple[int, int] = (64, 512), seed: int = 5):
        if n_dirs < 1 or n_files < 1:
            raise ValueError("n_dirs and n_files must be at least 1")
        self.n_dirs = n_dirs
        self.n_files = n_files
        rng = random.Random(seed)
        self.inodes: list[_Inode] = [_Inode(1, "/root", True, None)]
        for d in range(1, n_dirs):
            self.inodes.append(_Inode(d + 1, f"/root/d{d}", True, 1))
            self.inodes[0].children.add(f"d{d}")
        dirs = self.inodes[1:] or self.inodes[:1]
        for f in range(n_files):
            parent = dirs[f % len(dirs)]
            size = rng.randint(*value_size)
            words = b" ".join(rng.choice(_WORDS) for _ in range(size // 5 + 1))[:size]
            ino = _Inode(len(self.inodes) + 1, f"{parent.path}/f{f}", False, parent.ino,
                         data=words)
            parent.children.add(f"f{f}")
            self.inodes.append(ino)
        # objects whose keys the update leaves stale: every inode but the root
        self.objects = [i for i in self.inodes if i.parent is not None]
        self._cover: _Coverage | None = None
        self._seed = seed

    # naming -----------------------------------------------------------

    @staticmethod
    def dir_key(path: str, phase: int) -> str:
        return ("skx:" if phase == OLD else "skx:DIR:") + path

    @staticmethod
    def node_key(ino: int, field_: str) -> str:
        return f"skx:NODE:{ino}:{field_}"

    def key_count(self) -> int:
        non_root = len(self.inodes) - 1
        return (
            self.n_dirs                       # directory sets
            + 10 * non_root + self.n_files    # inode metadata + file data
            + non_root                        # path keys
            + 1                               # global inode counter
        )

    def stale_key_count(self) -> int:
        return self.n_dirs + 10 * (len(self.inodes) - 1) + self.n_files

    def populate(self):
        for ino in self.inodes:
            if ino.is_dir:
                yield ["SADD", self.dir_key(ino.path, OLD), *sorted(ino.children)] if ino.children \
                    else ["SADD", self.dir_key(ino.path, OLD), "."]
            if ino.parent is None:
                continue
            for f in NODE_META:
                yield ["SET", self.node_key(ino.ino, f), self._meta(ino, f)]
            if not ino.is_dir:
                yield ["SET", self.node_key(ino.ino, "DATA"), ino.data]
            yield ["SET", f"skx:PATH:{ino.path}", str(ino.ino)]
        yield ["SET", "skx:GLOBAL:NEXT_INODE", str(len(self.inodes) + 1)]

    @staticmethod
    def _meta(ino: _Inode, f: str) -> str:
        if f == "NAME":
            return ino.path.rsplit("/", 1)[1]
        if f == "TYPE":
            return "dir" if ino.is_dir else "file"
        if f == "SIZE":
            return str(len(ino.data))
        if f == "LINK":
            return "1"
        return str(ino.ino * 7 % 1000)

    def hello_pairs(self, phase: int) -> list[tuple[str, int]]:
        v = REDISFS_FROM if phase == OLD else REDISFS_TO
        d = "skx:/" if phase == OLD else "skx:DIR:/"
        return [(d, v), ("skx:NODE", v), ("skx:PATH", REDISFS_FROM), ("skx:GLOBAL", REDISFS_FROM)]

    def update_spec(self) -> str:
        return REDISFS_SPEC

    def migrate_prefixes(self) -> list[str]:
        return ["skx:DIR:/", "skx:NODE"]

    def expected_data(self, ino: _Inode, phase: int) -> bytes:
        return ino.data if phase == OLD else zlib.compress(ino.data)

    def next_op(self, rng: random.Random, phase: int) -> list[list]:
        """Stat or read one entry: path lookup, parent listing, every inode key."""
        if phase == NEW:
            if self._cover is None:
                self._cover = _Coverage(len(self.objects), random.Random(self._seed + 1))
            ino = self.objects[self._cover.draw(rng)]
        else:
            ino = self.objects[rng.randrange(len(self.objects))]
        parent = self.inodes[ino.parent - 1]  # type: ignore[operator]
        cmds: list[list] = [
            ["GET", f"skx:PATH:{ino.path}"],
            ["SMEMBERS", self.dir_key(parent.path, phase)],
        ]
        if ino.is_dir:
            cmds.append(["SMEMBERS", self.dir_key(ino.path, phase)])
        cmds += [["GET", self.node_key(ino.ino, f)] for f in NODE_META]
        if not ino.is_dir:
            cmds.append(["GET", self.node_key(ino.ino, "DATA")])
        return cmds

    def exhausted(self) -> bool:
        return self._cover is not None and self._cover.done()


# -- amico-like --------------------------------------------------------------

AMICO_PREFIXES = ("amico:followers", "amico:following", "amico:blocked",
                  "amico:reciprocated", "amico:pending")
AMICO_FROM, AMICO_TO = 1, 2


class Amico(Workload):
    """Follower graph: one sorted set per user and relation, scored by time."""

    name = "amico"

    def __init__(self, n_edges: int = 68_000, n_users: int | None = None, seed: int = 11):
        if n_edges < 1:
            raise ValueError("n_edges must be at least 1")
        self.n_edges = n_edges
        self.n_users = n_users or max(2, n_edges // 4)
        rng = random.Random(seed)
        self.sets: dict[tuple[str, int], dict[int, float]] = {}
        follows: set[tuple[int, int]] = set()
        for t in range(n_edges):
            u = rng.randrange(self.n_users)
            v = rng.randrange(self.n_users - 1)
            v += v >= u
            kind = rng.random()
            if kind < 0.6:
                self._add("following", u, v, t)
                self._add("followers", v, u, t)
                follows.add((u, v))
                if (v, u) in follows:
                    self._add("reciprocated", u, v, t)
                    self._add("reciprocated", v, u, t)
            elif kind < 0.8:
                self._add("pending", v, u, t)
            else:
                self._add("blocked", u, v, t)
        self.users = sorted({u for (_, u) in self.sets})

    def _add(self, rel: str, owner: int, member: int, t: int) -> None:
        self.sets.setdefault((rel, owner), {})[member] = float(t)

    @staticmethod
    def key(rel: str, user: int, phase: int) -> str:
        return f"amico:{rel}:{user}" if phase == OLD else f"amico:{rel}:default:{user}"

    def key_count(self) -> int:
        return len(self.sets)

    def stale_key_count(self) -> int:
        return len(self.sets)

    def populate(self):
        for (rel, owner), members in sorted(self.sets.items()):
            args: list = ["ZADD", self.key(rel, owner, OLD)]
            for m, s in sorted(members.items()):
                args += [s, str(m)]
            yield args

    def hello_pairs(self, phase: int) -> list[tuple[str, int]]:
        if phase == OLD:
            return [(p, AMICO_FROM) for p in AMICO_PREFIXES]
        return [(p + ":default", AMICO_TO) for p in AMICO_PREFIXES]

    def update_spec(self) -> str:
        lines = ["# scope every relation under the default scope"]
        lines += [f"change {p} {p}:default {AMICO_FROM} {AMICO_TO}" for p in AMICO_PREFIXES]
        return "\n".join(lines) + "\n"

    def migrate_prefixes(self) -> list[str]:
        return [p + ":default" for p in AMICO_PREFIXES]

    def queries(self) -> list[tuple[str, int, int]]:
        """Fixed follower queries (relation, owner, member) for equivalence checks."""
        rng = random.Random(99)
        out = []
        for _ in range(200):
            rel, owner = rng.choice(sorted(self.sets))
            member = rng.choice(sorted(self.sets[(rel, owner)]))
            out.append((rel, owner, member))
            out.append((rel, owner, rng.randrange(self.n_users)))
        return out

    def next_op(self, rng: random.Random, phase: int) -> list[list]:
        u = rng.randrange(self.n_users)
        v = rng.randrange(self.n_users)
        if rng.random() < 0.8:
            return [["ZSCORE", self.key("followers", u, phase), str(v)]]
        return [["ZADD", self.key("following", u, phase), 1.0, str(v)],
                ["ZADD", self.key("followers", v, phase), 1.0, str(u)]]


def make_workload(name: str, **kw) -> Workload:
    if name in ("redisfs", "redisfs-like"):
        return RedisFS(**kw)
    if name in ("amico", "amico-like"):
        return Amico(**kw)
    if name == "uniform":
        return Uniform(**kw)
    raise ValueError(f"unknown workload {name!r}")
