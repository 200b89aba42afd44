"""Exception hierarchy shared by the engine, server and client."""


class LazyKVError(Exception):
    """Base class for every error raised by lazykv."""


class KeyFormatError(LazyKVError, ValueError):
    pass


class VersionError(LazyKVError):
    """A write carried a version tag above the logical version of its prefix."""


class WrongTypeError(LazyKVError):
    def __init__(self, key: bytes, expected: str, actual: str):
        super().__init__(f"{key!r} holds {actual}, not {expected}")
        self.key = key
        self.expected = expected
        self.actual = actual


class RetiredPrefixError(LazyKVError):
    """A command named a key under a prefix text that a rename superseded."""

    def __init__(self, key: bytes, prefix: bytes, current: bytes):
        super().__init__(
            f"{key!r} is under retired prefix {prefix!r}; use {current!r}"
        )
        self.key = key
        self.prefix = prefix
        self.current = current


class UpdateRejected(LazyKVError):
    """An update spec failed validation; nothing was installed."""


class TransformFailed(LazyKVError):
    def __init__(self, key: bytes, step: str, reason: str):
        super().__init__(f"transform of {key!r} failed at {step}: {reason}")
        self.key = key
        self.step = step
        self.reason = reason


class ParseError(LazyKVError):
    def __init__(self, message: str, line: int, column: int):
        super().__init__(f"{message} at line {line}, column {column}")
        self.message = message
        self.line = line
        self.column = column


class CorruptFileError(LazyKVError):
    """A snapshot failed its checksum or had a bad header."""


class ProtocolError(LazyKVError):
    """Malformed framing on the wire; the connection cannot continue."""


class ReplyError(LazyKVError):
    """An error reply (``-...``) received by the client."""

    def __init__(self, line: str):
        super().__init__(line)
        self.code = line.split(" ", 1)[0]
        self.line = line


class Disconnected(LazyKVError):
    """The server closed the connection (possibly after GOAWAY)."""
