"""A key-value store whose value formats can be upgraded online, migrating
stale entries lazily when commands touch them."""

from .core import Hash, List, Set, Store, Str, VersionedValue, ZSet
from .engine import Engine, MigrationStats
from .errors import (
    LazyKVError,
    ParseError,
    RetiredPrefixError,
    TransformFailed,
    UpdateRejected,
    WrongTypeError,
)
from .registry import PrefixChange, Registry
from .specdoc import UpdateSpec, format_spec_document, parse_spec_document
from .transform import Program, TransformerRegistry, parse_program

__all__ = [
    "Engine", "MigrationStats", "Store", "Str", "List", "Set", "Hash", "ZSet",
    "VersionedValue", "Registry", "PrefixChange", "UpdateSpec", "Program",
    "TransformerRegistry", "parse_program", "parse_spec_document",
    "format_spec_document", "LazyKVError", "ParseError", "RetiredPrefixError",
    "TransformFailed", "UpdateRejected", "WrongTypeError",
]
