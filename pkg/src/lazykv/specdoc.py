"""Update-spec documents: the body of ``UPGRADE`` and of ``.kvu`` files.

::

    # purchase orders get differentiated pricing
    program fig1_transform {
        foreach order/orderItems { rename price fullPrice; add discountedPrice = fullPrice - 3.0; }
    }
    change order order 0 1 fig1_transform
    change amico:followers amico:followers:default 1 2

A ``change`` line names the old prefix, the new prefix, the from and to
versions, then zero or more transformer names applied in order. Names not
defined by a ``program`` block must be native transformers known to the
server.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field

from .errors import ParseError
from .registry import PrefixChange
from .transform import Program, parse_block

_TOKEN = re.compile(r"\S+")
_NAME = re.compile(r"[A-Za-z_][A-Za-z0-9_.-]*")


@dataclass
class UpdateSpec:
    changes: list[PrefixChange] = field(default_factory=list)

    def transformer_names(self) -> list[str]:
        return [n for c in self.changes for n in c.transformers]


def _where(text: str, pos: int) -> tuple[int, int]:
    return text.count("\n", 0, pos) + 1, pos - (text.rfind("\n", 0, pos) + 1) + 1


def parse_spec_document(text: str | bytes) -> tuple[UpdateSpec, dict[str, Program]]:
    if isinstance(text, bytes):
        try:
            text = text.decode("utf-8")
        except UnicodeDecodeError as exc:
            raise ParseError("spec document is not UTF-8", 1, exc.start + 1) from None
    spec = UpdateSpec()
    programs: dict[str, Program] = {}
    pos = 0
    n = len(text)
    while pos < n:
        eol = text.find("\n", pos)
        eol = n if eol < 0 else eol
        line = text[pos:eol]
        stripped = line.strip()
        if not stripped or stripped.startswith("#"):
            pos = eol + 1
            continue
        words = [(m.group(), pos + m.start()) for m in _TOKEN.finditer(line)]
        kw, kw_pos = words[0]
        if kw == "program":
            if len(words) < 2 or not _NAME.fullmatch(words[1][0]):
                raise ParseError("program needs a name", *_where(text, kw_pos))
            name = words[1][0]
            if name in programs:
                raise ParseError(f"duplicate program {name!r}", *_where(text, words[1][1]))
            brace = text.find("{", words[1][1] + len(name))
            if brace < 0 or text[words[1][1] + len(name) : brace].strip():
                raise ParseError("expected '{' after program name", *_where(text, words[1][1]))
            program, end = parse_block(text, brace)
            programs[name] = program
            pos = end
            continue
        if kw == "change":
            if len(words) < 5:
                raise ParseError(
                    "change needs: old-prefix new-prefix from-version to-version [transformers]",
                    *_where(text, kw_pos),
                )
            (old, _), (new, _), (v0, p0), (v1, p1) = words[1:5]
            versions = []
            for v, p in ((v0, p0), (v1, p1)):
                if not v.isdigit():
                    raise ParseError(f"version must be a number, got {v!r}", *_where(text, p))
                versions.append(int(v))
            names = []
            for t, p in words[5:]:
                if not _NAME.fullmatch(t):
                    raise ParseError(f"bad transformer name {t!r}", *_where(text, p))
                names.append(t)
            spec.changes.append(
                PrefixChange(old.encode(), new.encode(), versions[0], versions[1], tuple(names))
            )
            pos = eol + 1
            continue
        raise ParseError(f"unknown directive {kw!r}", *_where(text, kw_pos))
    if not spec.changes:
        raise ParseError("spec document has no change lines", 1, 1)
    return spec, programs


def format_spec_document(spec: UpdateSpec, programs: dict[str, Program] | None = None) -> str:
    lines = []
    for name, program in (programs or {}).items():
        lines.append(f"program {name} {{ {program.to_text()} }}")
    for c in spec.changes:
        parts = [
            "change",
            c.old_prefix.decode(),
            c.new_prefix.decode(),
            str(c.from_version),
            str(c.to_version),
            *c.transformers,
        ]
        lines.append(" ".join(parts))
    return "\n".join(lines) + "\n"
