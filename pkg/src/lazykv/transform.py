"""Value transformers: a small declarative language plus host-native functions.

A transformer sees exactly one (key, value) pair and returns the new value;
it has no handle on the store. Programs are made of steps::

    foreach order/orderItems { rename price fullPrice; add discountedPrice = fullPrice - 3.0; }

JSON steps parse the value with exact decimal numbers (so ``19.99 - 3.0`` is
``16.99``) and re-serialize it compactly, preserving field order. Byte steps
(``compress``, ``decompress``, ``set``) act on the whole value.
"""

from __future__ import annotations

import base64
import binascii
import decimal
import json
import re
import zlib
from dataclasses import dataclass, field
from decimal import Decimal
from typing import Callable, Union

from .core import Hash, List, Payload, Set, Str, ZSet
from .errors import ParseError, TransformFailed

NativeFn = Callable[[bytes, bytes], bytes]

_NAME_RE = re.compile(r"[A-Za-z_][A-Za-z0-9_]*")
_NUMBER_RE = re.compile(r"\d+(\.\d+)?([eE][+-]?\d+)?")
_B64_RE = re.compile(r"[A-Za-z0-9+/=]*")
_KEYWORDS = ("rename", "add", "delete", "foreach", "compress", "decompress", "set")
_DEC_CTX = decimal.Context(prec=28, traps=[decimal.DivisionByZero, decimal.InvalidOperation])


# -- AST -------------------------------------------------------------------


@dataclass(frozen=True)
class Num:
    value: Union[int, Decimal]


@dataclass(frozen=True)
class Text:
    value: str


@dataclass(frozen=True)
class Ref:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str
    left: "Expr"
    right: "Expr"


Expr = Union[Num, Text, Ref, Neg, BinOp]


@dataclass(frozen=True)
class Rename:
    path: tuple[str, ...]
    old: str
    new: str


@dataclass(frozen=True)
class Add:
    path: tuple[str, ...]
    name: str
    expr: Expr


@dataclass(frozen=True)
class Delete:
    path: tuple[str, ...]
    name: str


@dataclass(frozen=True)
class ForEach:
    path: tuple[str, ...]
    steps: tuple["Step", ...]


@dataclass(frozen=True)
class Compress:
    pass


@dataclass(frozen=True)
class Decompress:
    pass


@dataclass(frozen=True)
class SetBytes:
    data: bytes


Step = Union[Rename, Add, Delete, ForEach, Compress, Decompress, SetBytes]


@dataclass(frozen=True)
class Program:
    steps: tuple[Step, ...] = ()

    def to_text(self) -> str:
        return " ".join(_step_text(s) for s in self.steps)


# -- canonical text ----------------------------------------------------------


def _name_text(name: str) -> str:
    if _NAME_RE.fullmatch(name) and name not in _KEYWORDS:
        return name
    return json.dumps(name, ensure_ascii=False)


def _path_text(path: tuple[str, ...], last: str | None = None) -> str:
    parts = list(path) + ([last] if last is not None else [])
    return "/".join(_name_text(p) for p in parts)


def _expr_text(e: Expr) -> str:
    if isinstance(e, Num):
        return str(e.value)
    if isinstance(e, Text):
        return json.dumps(e.value, ensure_ascii=False)
    if isinstance(e, Ref):
        return _name_text(e.name)
    if isinstance(e, Neg):
        return f"-({_expr_text(e.operand)})"
    return f"({_expr_text(e.left)} {e.op} {_expr_text(e.right)})"


def _step_text(s: Step) -> str:
    if isinstance(s, Rename):
        return f"rename {_path_text(s.path, s.old)} {_name_text(s.new)};"
    if isinstance(s, Add):
        return f"add {_path_text(s.path, s.name)} = {_expr_text(s.expr)};"
    if isinstance(s, Delete):
        return f"delete {_path_text(s.path, s.name)};"
    if isinstance(s, ForEach):
        body = " ".join(_step_text(x) for x in s.steps)
        return f"foreach {_path_text(s.path)} {{ {body} }}" if body else f"foreach {_path_text(s.path)} {{ }}"
    if isinstance(s, Compress):
        return "compress;"
    if isinstance(s, Decompress):
        return "decompress;"
    return f"set {base64.b64encode(s.data).decode()};"


# -- parser ----------------------------------------------------------------


class _Scanner:
    def __init__(self, text: str):
        self.text = text
        self.pos = 0

    def where(self, pos: int | None = None) -> tuple[int, int]:
        pos = self.pos if pos is None else pos
        line = self.text.count("\n", 0, pos) + 1
        col = pos - (self.text.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def error(self, message: str, pos: int | None = None) -> ParseError:
        return ParseError(message, *self.where(pos))

    def skip(self) -> None:
        text, n = self.text, len(self.text)
        while self.pos < n:
            c = text[self.pos]
            if c.isspace():
                self.pos += 1
            elif c == "#":
                nl = text.find("\n", self.pos)
                self.pos = n if nl < 0 else nl
            else:
                break

    def peek(self) -> str:
        self.skip()
        return self.text[self.pos] if self.pos < len(self.text) else ""

    def at_end(self) -> bool:
        return self.peek() == ""

    def expect(self, ch: str) -> None:
        if self.peek() != ch:
            found = self.peek() or "end of input"
            raise self.error(f"expected {ch!r}, found {found!r}")
        self.pos += 1

    def word(self) -> str:
        self.skip()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a step name")
        self.pos = m.end()
        return m.group()

    def string(self) -> str:
        start = self.pos
        try:
            value, end = json.JSONDecoder().raw_decode(self.text, self.pos)
        except json.JSONDecodeError:
            raise self.error("bad string literal", start) from None
        if not isinstance(value, str):
            raise self.error("expected a string literal", start)
        self.pos = end
        return value

    def name(self) -> str:
        c = self.peek()
        if c == '"':
            return self.string()
        m = _NAME_RE.match(self.text, self.pos)
        if not m:
            raise self.error("expected a field name")
        self.pos = m.end()
        return m.group()

    def path(self) -> tuple[str, ...]:
        parts = [self.name()]
        while self.pos < len(self.text) and self.text[self.pos] == "/":
            self.pos += 1
            parts.append(self.name())
        return tuple(parts)

    def base64(self) -> bytes:
        self.skip()
        start = self.pos
        m = _B64_RE.match(self.text, self.pos)
        self.pos = m.end()
        try:
            return base64.b64decode(m.group(), validate=True)
        except binascii.Error:
            raise self.error("bad base64 constant", start) from None

    # expressions: sum := term (('+'|'-') term)*, term := unary (('*'|'/') unary)*
    def expr(self) -> Expr:
        left = self.term()
        while self.peek() in ("+", "-"):
            op = self.text[self.pos]
            self.pos += 1
            left = BinOp(op, left, self.term())
        return left

    def term(self) -> Expr:
        left = self.unary()
        while self.peek() in ("*", "/"):
            op = self.text[self.pos]
            self.pos += 1
            left = BinOp(op, left, self.unary())
        return left

    def unary(self) -> Expr:
        c = self.peek()
        if c == "-":
            self.pos += 1
            return Neg(self.unary())
        if c == "(":
            self.pos += 1
            e = self.expr()
            self.expect(")")
            return e
        if c == '"':
            return Text(self.string())
        if c.isdigit():
            m = _NUMBER_RE.match(self.text, self.pos)
            self.pos = m.end()
            lit = m.group()
            return Num(int(lit) if lit.isdigit() else Decimal(lit))
        if c and (c.isalpha() or c == "_"):
            return Ref(self.name())
        raise self.error(f"expected an expression, found {c or 'end of input'!r}")

    def steps(self, closing: str) -> tuple[Step, ...]:
        out: list[Step] = []
        while True:
            c = self.peek()
            if c == closing:
                return tuple(out)
            if c == ";":
                self.pos += 1
                continue
            out.append(self.step())

    def step(self) -> Step:
        self.skip()
        start = self.pos
        kw = self.word()
        if kw == "rename":
            path = self.path()
            new = self.name()
            step: Step = Rename(path[:-1], path[-1], new)
        elif kw == "add":
            path = self.path()
            self.expect("=")
            step = Add(path[:-1], path[-1], self.expr())
        elif kw == "delete":
            path = self.path()
            step = Delete(path[:-1], path[-1])
        elif kw == "foreach":
            path = self.path()
            self.expect("{")
            body = self.steps("}")
            self.expect("}")
            return ForEach(path, body)
        elif kw == "compress":
            step = Compress()
        elif kw == "decompress":
            step = Decompress()
        elif kw == "set":
            step = SetBytes(self.base64())
        else:
            raise self.error(f"unknown step {kw!r}", start)
        self.expect(";")
        return step


def parse_program(text: Union[bytes, str]) -> Program:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("program is not UTF-8", 1, exc.start + 1) from None
    sc = _Scanner(text)
    steps = sc.steps("")
    return Program(steps)


# -- JSON with exact decimals -----------------------------------------------


def _reject_constant(name: str):
    raise ValueError(f"non-standard JSON constant {name}")


def load_json(value: bytes):
    return json.loads(
        value.decode("utf-8"), parse_float=Decimal, parse_constant=_reject_constant
    )


def dump_json(doc) -> bytes:
    return _dump(doc).encode("utf-8")


def _dump(v) -> str:
    if isinstance(v, dict):
        return "{" + ",".join(
            json.dumps(k, ensure_ascii=False) + ":" + _dump(x) for k, x in v.items()
        ) + "}"
    if isinstance(v, list):
        return "[" + ",".join(_dump(x) for x in v) + "]"
    if isinstance(v, str):
        return json.dumps(v, ensure_ascii=False)
    if v is True:
        return "true"
    if v is False:
        return "false"
    if v is None:
        return "null"
    if isinstance(v, int):
        return str(v)
    if isinstance(v, Decimal):
        if not v.is_finite():
            raise ValueError(f"non-finite number {v}")
        return str(v)
    if isinstance(v, float):
        return repr(v)
    raise TypeError(f"cannot serialize {type(v).__name__}")


# -- evaluation --------------------------------------------------------------


class _StepError(Exception):
    pass


def _is_number(v) -> bool:
    return isinstance(v, (int, Decimal)) and not isinstance(v, bool)


def _eval(e: Expr, obj: dict):
    if isinstance(e, Num):
        return e.value
    if isinstance(e, Text):
        return e.value
    if isinstance(e, Ref):
        if e.name not in obj:
            raise _StepError(f"missing field {e.name!r}")
        return obj[e.name]
    if isinstance(e, Neg):
        v = _eval(e.operand, obj)
        if not _is_number(v):
            raise _StepError("negation of a non-number")
        return -v
    a = _eval(e.left, obj)
    b = _eval(e.right, obj)
    if e.op == "+" and isinstance(a, str) and isinstance(b, str):
        return a + b
    if not (_is_number(a) and _is_number(b)):
        raise _StepError(f"operator {e.op!r} needs numbers")
    try:
        if e.op == "+":
            r = a + b if isinstance(a, int) and isinstance(b, int) else _DEC_CTX.add(Decimal(a), Decimal(b))
        elif e.op == "-":
            r = a - b if isinstance(a, int) and isinstance(b, int) else _DEC_CTX.subtract(Decimal(a), Decimal(b))
        elif e.op == "*":
            r = a * b if isinstance(a, int) and isinstance(b, int) else _DEC_CTX.multiply(Decimal(a), Decimal(b))
        else:
            r = _DEC_CTX.divide(Decimal(a), Decimal(b))
    except decimal.DecimalException as exc:
        raise _StepError(f"arithmetic error: {type(exc).__name__}") from None
    return r


def _walk(doc, path: tuple[str, ...]):
    node = doc
    for part in path:
        if not isinstance(node, dict):
            raise _StepError(f"path segment {part!r}: not an object")
        if part not in node:
            raise _StepError(f"missing path segment {part!r}")
        node = node[part]
    return node


def _object_at(doc, path: tuple[str, ...]) -> dict:
    node = _walk(doc, path)
    if not isinstance(node, dict):
        raise _StepError("target is not an object")
    return node


def _json_step(step: Step, doc) -> None:
    if isinstance(step, Rename):
        obj = _object_at(doc, step.path)
        if step.old not in obj:
            raise _StepError(f"missing field {step.old!r}")
        if step.new in obj and step.new != step.old:
            raise _StepError(f"field {step.new!r} already exists")
        items = [(step.new if k == step.old else k, v) for k, v in obj.items()]
        obj.clear()
        obj.update(items)
    elif isinstance(step, Add):
        obj = _object_at(doc, step.path)
        obj[step.name] = _eval(step.expr, obj)
    elif isinstance(step, Delete):
        obj = _object_at(doc, step.path)
        if step.name not in obj:
            raise _StepError(f"missing field {step.name!r}")
        del obj[step.name]
    elif isinstance(step, ForEach):
        arr = _walk(doc, step.path)
        if not isinstance(arr, list):
            raise _StepError("foreach target is not an array")
        for elem in arr:
            for inner in step.steps:
                if not isinstance(inner, (Rename, Add, Delete, ForEach)):
                    raise _StepError("byte steps are not allowed inside foreach")
                _json_step(inner, elem)


def run_program(program: Program, key: bytes, value: bytes) -> bytes:
    """Apply ``program`` to one byte-string value. Raises TransformFailed."""
    state: Union[bytes, object] = value
    parsed = False
    for step in program.steps:
        try:
            if isinstance(step, (Compress, Decompress, SetBytes)):
                if parsed:
                    state = dump_json(state)
                    parsed = False
                if isinstance(step, Compress):
                    state = zlib.compress(state)  # type: ignore[arg-type]
                elif isinstance(step, Decompress):
                    state = zlib.decompress(state)  # type: ignore[arg-type]
                else:
                    state = step.data
            else:
                if not parsed:
                    state = load_json(state)  # type: ignore[arg-type]
                    parsed = True
                _json_step(step, state)
        except _StepError as exc:
            raise TransformFailed(key, _step_text(step), str(exc)) from None
        except zlib.error as exc:
            raise TransformFailed(key, _step_text(step), f"not deflate data: {exc}") from None
        except (UnicodeDecodeError, ValueError) as exc:
            raise TransformFailed(key, _step_text(step), f"bad JSON: {exc}") from None
    if parsed:
        try:
            return dump_json(state)
        except (TypeError, ValueError) as exc:
            raise TransformFailed(key, "serialize", str(exc)) from None
    return state  # type: ignore[return-value]


# -- transformers and the registry ------------------------------------------


@dataclass
class Transformer:
    name: str
    program: Program | None = None
    native: NativeFn | None = None

    def run(self, key: bytes, value: bytes) -> bytes:
        if self.program is not None:
            return run_program(self.program, key, value)
        if self.native is None:
            raise TransformFailed(key, self.name, "native transformer not available")
        try:
            out = self.native(key, value)
        except TransformFailed:
            raise
        except Exception as exc:  # native code is foreign; report, do not crash
            raise TransformFailed(key, self.name, f"{type(exc).__name__}: {exc}") from None
        if not isinstance(out, bytes):
            raise TransformFailed(key, self.name, "native transformer returned non-bytes")
        return out


def apply(t: Transformer, key: bytes, value: Payload) -> Payload:
    """Transform a payload; containers are transformed element by element."""
    if isinstance(value, Str):
        return Str(t.run(key, value.value))
    if isinstance(value, List):
        return List([t.run(key, x) for x in value.items])
    if isinstance(value, Set):
        return Set({t.run(key, x) for x in value.members})
    if isinstance(value, Hash):
        return Hash({f: t.run(key, v) for f, v in value.fields.items()})
    if isinstance(value, ZSet):
        out: dict[bytes, float] = {}
        for m, s in value.scores.items():
            nm = t.run(key, m)
            if nm in out:
                raise TransformFailed(key, t.name, "sorted-set members collide after transform")
            out[nm] = s
        return ZSet(out)
    raise TypeError(f"not a payload: {value!r}")


def compose(chain: list[Transformer], key: bytes, value: Payload) -> Payload:
    for t in chain:
        value = apply(t, key, value)
    return value


def _append_upd(key: bytes, value: bytes) -> bytes:
    return value + b"upd"


def _redisfs_compress_data(key: bytes, value: bytes) -> bytes:
    return zlib.compress(value) if key.endswith(b":DATA") else value


BUILTIN_NATIVES: dict[str, NativeFn] = {
    "append_upd": _append_upd,
    "redisfs_compress_data": _redisfs_compress_data,
}


@dataclass
class TransformerRegistry:
    natives: dict[str, NativeFn] = field(default_factory=lambda: dict(BUILTIN_NATIVES))
    programs: dict[str, Program] = field(default_factory=dict)

    def register_native(self, name: str, fn: NativeFn) -> None:
        self.natives[name] = fn

    def knows(self, name: str) -> bool:
        return name in self.programs or name in self.natives

    def get(self, name: str) -> Transformer:
        if name in self.programs:
            return Transformer(name, program=self.programs[name])
        # an unresolvable native yields a transformer that fails when run
        return Transformer(name, native=self.natives.get(name))


FIG1_TRANSFORM_TEXT = (
    "foreach order/orderItems { rename price fullPrice; "
    "add discountedPrice = fullPrice - 3.0; }"
)
fig1_transform = parse_program(FIG1_TRANSFORM_TEXT)


def parse_block(text: str, pos: int) -> tuple[Program, int]:
    """Parse ``{ steps }`` starting at ``pos``; return the program and the end offset."""
    sc = _Scanner(text)
    sc.pos = pos
    sc.expect("{")
    steps = sc.steps("}")
    sc.expect("}")
    return Program(steps), sc.pos
