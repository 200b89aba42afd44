"""Random command traces over a fixed set of nested and delimiter-terminated
prefixes, replayed in lockstep against the engine and the eager model."""

from __future__ import annotations

import json
import random
from dataclasses import dataclass, field

from lazykv.engine import Engine
from lazykv.errors import RetiredPrefixError, WrongTypeError
from lazykv.specdoc import parse_spec_document
from lazykv.transform import TransformerRegistry

from oracle import DELIMS, EagerModel, ModelRetired, ModelWrongType, matches

# (text, starting version); "a:n" sits inside "a", "d" holds JSON documents
PREFIXES = [("a", 0), ("a:n", 0), ("b:", 2), ("c/", 0), ("d", 1), ("e:", 0)]
JSON_CHAIN = "d"
SUFFIXES = ["1", "2", "3", "4", "x:1", "x:2", "n:1", "n:2", "v1:1", "v2:1", "v3:1", "v4:2"]
VALUES = [b"v%d" % i for i in range(8)]
FIELDS = [b"f%d" % i for i in range(4)]
MEMBERS = [b"m%d" % i for i in range(6)]
NATIVE_CHOICES = ["append_upd", "reverse", "squeeze"]
PROGRAMS = {
    "squeeze": "compress;",
    "jsonbump": "rename n count; add next = count + 1;",
}

STRING_OPS = ["get", "set", "set_nx", "set_xx", "delete", "exists"]
CONTAINER_OPS = [
    "lpush", "lpop", "lrange", "sadd", "spop", "smembers",
    "hset", "hget", "hgetall", "zadd", "zscore",
]
KIND_OPS = {
    "list": ["lpush", "lpop", "lrange"],
    "set": ["sadd", "spop", "smembers"],
    "hash": ["hset", "hget", "hgetall"],
    "zset": ["zadd", "zscore"],
}


def make_transformers() -> TransformerRegistry:
    reg = TransformerRegistry()
    reg.register_native("reverse", lambda k, v: v[::-1])
    return reg


def make_engine(persistence=None, **kwargs) -> Engine:
    eng = Engine(transformers=make_transformers(), **kwargs)
    if persistence is not None:
        persistence.recover(eng)
    eng.hello(object(), [(t.encode(), v) for t, v in PREFIXES])
    return eng


def make_model() -> EagerModel:
    m = EagerModel()
    for t, v in PREFIXES:
        m.declare(t, v)
    return m


@dataclass
class TraceState:
    model: EagerModel
    counter: int = 0
    bumped: set = field(default_factory=set)


# -- generation --------------------------------------------------------------


def _is_json_chain(chain) -> bool:
    return chain.texts[0] == JSON_CHAIN


def gen_command(rng: random.Random, st: TraceState) -> tuple:
    model = st.model
    if rng.random() < 0.06:
        key, json_chain = "u:" + rng.choice(SUFFIXES), False
    else:
        chain = rng.choice(model.chains)
        retired = [t for t in chain.texts if t != chain.head]
        text = rng.choice(retired) if retired and rng.random() < 0.1 else chain.head
        sep = "" if text[-1] in DELIMS else ":"
        key = text + sep + rng.choice(SUFFIXES)
        json_chain = _is_json_chain(chain)
    op = rng.choice(STRING_OPS if json_chain or rng.random() < 0.4 else CONTAINER_OPS)
    held = model.data.get(key)
    if held is not None and held[0] != "string" and rng.random() < 0.7:
        # mostly use the type the key already holds, so WRONGTYPE stays the exception
        op = rng.choice(KIND_OPS[held[0]])
    if op.startswith("set"):
        if json_chain:
            value = json.dumps({"n": rng.randrange(-50, 50)}, separators=(",", ":")).encode()
        else:
            value = rng.choice(VALUES)
        flag = {"set": None, "set_nx": "NX", "set_xx": "XX"}[op]
        return ("set", key, (value, flag))
    if op in ("get", "delete", "exists", "lpop", "spop", "smembers", "hgetall"):
        return (op, key, ())
    if op == "lpush":
        return (op, key, tuple(rng.choice(VALUES) for _ in range(rng.randint(1, 3))))
    if op == "lrange":
        return (op, key, (rng.randint(-3, 2), rng.randint(-2, 3)))
    if op == "sadd":
        return (op, key, tuple(rng.choice(MEMBERS) for _ in range(rng.randint(1, 3))))
    if op == "hset":
        args: list = []
        for _ in range(rng.randint(1, 2)):
            args += [rng.choice(FIELDS), rng.choice(VALUES)]
        return (op, key, tuple(args))
    if op == "hget":
        return (op, key, (rng.choice(FIELDS),))
    if op == "zadd":
        args = []
        for _ in range(rng.randint(1, 2)):
            args += [rng.randint(-5, 5), rng.choice(MEMBERS)]
        return (op, key, tuple(args))
    return ("zscore", key, (rng.choice(MEMBERS),))


def _fresh_text(rng: random.Random, st: TraceState, chain, head: str) -> str:
    st.counter += 1
    n = st.counter
    inside_other = any(
        matches(t, head) for c in st.model.chains if c is not chain for t in c.texts
    )
    if not inside_other and rng.random() < 0.5:
        # rename into the old namespace: old keys can shadow new names
        if head[-1] in DELIMS:
            return f"{head}v{n}{head[-1]}"
        return f"{head}:v{n}"
    if head[-1] in DELIMS:
        return f"r{n}{head[-1]}"
    return f"r{n}"


def gen_install(rng: random.Random, st: TraceState) -> tuple:
    changes = []
    for chain in rng.sample(st.model.chains, rng.choice([1, 1, 2, 3])):
        head = chain.head
        for _ in range(2 if rng.random() < 0.15 else 1):
            kind = rng.choice(["rename", "transform", "both"])
            names: tuple = ()
            if kind != "rename":
                if _is_json_chain(chain):
                    if chain.texts[0] not in st.bumped:
                        st.bumped.add(chain.texts[0])
                        names = ("jsonbump",)
                    else:
                        kind = "rename"
                else:
                    names = tuple(rng.sample(NATIVE_CHOICES, rng.randint(1, 2)))
            new = _fresh_text(rng, st, chain, head) if kind != "transform" else head
            changes.append((head, new, names))
            head = new
    return ("install", changes, ())


def spec_text(model: EagerModel, changes) -> str:
    lines = []
    used = {n for _, _, names in changes for n in names}
    for name in sorted(used & set(PROGRAMS)):
        lines.append(f"program {name} {{ {PROGRAMS[name]} }}")
    versions = {}
    for old, new, names in changes:
        v = versions.get(old)
        if v is None:
            v = model.chain_of(old).version
        lines.append(" ".join(["change", old, new, str(v), str(v + 1), *names]))
        versions[new] = v + 1
    return "\n".join(lines) + "\n"


# -- execution ------------------------------------------------------------


def _plain(payload):
    if payload is None:
        return None
    kind = payload.KIND
    if kind == "string":
        return (kind, payload.value)
    if kind == "list":
        return (kind, list(payload.items))
    if kind == "set":
        return (kind, set(payload.members))
    if kind == "hash":
        return (kind, dict(payload.fields))
    return (kind, dict(payload.scores))


def run_engine(eng: Engine, step: tuple):
    op, key, args = step[:3]
    if op == "install":
        spec, programs = parse_spec_document(spec_text(step[3], key))
        eng.install_update(spec, programs)
        return "OK"
    k = key.encode()
    try:
        if op == "get":
            return _plain(eng.get(k))
        if op == "set":
            return eng.set(k, args[0], args[1])
        return getattr(eng, op)(k, *args)
    except RetiredPrefixError:
        return "RETIRED"
    except WrongTypeError:
        return "WRONGTYPE"


def run_model(model: EagerModel, step: tuple):
    op, key, args = step
    if op == "install":
        model.install(key)
        return "OK"
    try:
        if op == "set":
            return model.set(key, args[0], args[1])
        return getattr(model, op)(key, *args)
    except ModelRetired:
        return "RETIRED"
    except ModelWrongType:
        return "WRONGTYPE"


def generate_step(rng: random.Random, st: TraceState, install: bool) -> tuple:
    if install:
        op, changes, _ = gen_install(rng, st)
        # the spec text needs versions from the model before it advances
        return (op, changes, (), st.model)
    return gen_command(rng, st)


def run_step(eng: Engine, st: TraceState, step: tuple):
    """Run one step on both sides; return (engine reply, model reply)."""
    got = run_engine(eng, step)
    want = run_model(st.model, step[:3])
    return got, want


@dataclass
class TraceOutcome:
    seed: int
    commands: int
    installs: int
    mismatch: str | None = None


def run_trace(seed: int, length: int = 500, max_installs: int = 3) -> TraceOutcome:
    rng = random.Random(seed)
    eng = make_engine()
    st = TraceState(make_model())
    n_installs = rng.randint(1, max_installs)
    at = sorted(rng.sample(range(1, length), n_installs))
    out = TraceOutcome(seed, length, n_installs)
    log: list = []
    for i in range(length):
        while at and at[0] == i:
            at.pop(0)
            step = generate_step(rng, st, True)
            log.append(step[:3])
            run_step(eng, st, step)
        step = generate_step(rng, st, False)
        log.append(step)
        got, want = run_step(eng, st, step)
        if got != want:
            out.mismatch = f"step {len(log)} {step!r}: engine {got!r} model {want!r}"
            return out
    if eng.logical_items() != st.model.payloads():
        out.mismatch = "logical view differs before flush"
        return out
    eng.eager_migrate_all()
    if eng.store.digest(with_tags=False) != st.model.digest():
        out.mismatch = "store digest differs after flush"
    return out
