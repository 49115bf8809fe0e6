"""Exception hierarchy shared by every ctxqr module.

Each error carries a stable ``code`` string; the HTTP service and the CLI
report that code verbatim.
"""

from __future__ import annotations

from typing import Iterable


class CtxQrError(Exception):
    """Base class for all domain errors raised by ctxqr."""

    code = "error"


class InvalidMac(CtxQrError, ValueError):
    code = "InvalidMac"


class InvalidObservation(CtxQrError, ValueError):
    code = "InvalidObservation"


class EmptyFingerprint(CtxQrError, ValueError):
    code = "EmptyFingerprint"


class InsufficientOverlap(CtxQrError, ValueError):
    code = "InsufficientOverlap"


class DegenerateRanks(CtxQrError, ValueError):
    code = "DegenerateRanks"


class EmptyRadioMap(CtxQrError, ValueError):
    code = "EmptyRadioMap"


class InvalidRadioMap(CtxQrError, ValueError):
    code = "InvalidRadioMap"


class NotAUrl(CtxQrError, ValueError):
    code = "NotAUrl"


class AmbiguousContext(CtxQrError, ValueError):
    code = "AmbiguousContext"


class MalformedApParam(CtxQrError, ValueError):
    code = "MalformedApParam"


class MalformedContextId(CtxQrError, ValueError):
    code = "MalformedContextId"


class NoContext(CtxQrError, ValueError):
    code = "NoContext"


class MissingSalt(CtxQrError, ValueError):
    code = "MissingSalt"


class UnknownContext(CtxQrError, LookupError):
    code = "UnknownContext"


class InvalidInterval(CtxQrError, ValueError):
    code = "InvalidInterval"


class OutOfBounds(CtxQrError, ValueError):
    code = "OutOfBounds"


class ParseError(CtxQrError, ValueError):
    """Syntax error in a rules source, located by 1-based line and column."""

    code = "ParseError"

    def __init__(self, message: str, line: int, column: int, expected: Iterable[str] = ()):
        self.message = message
        self.line = line
        self.column = column
        self.expected = frozenset(expected)
        super().__init__(self._render())

    def _render(self) -> str:
        text = f"line {self.line}, column {self.column}: {self.message}"
        if self.expected:
            text += f" (expected one of: {', '.join(sorted(self.expected))})"
        return text


class IntervalLiteralError(ParseError, InvalidInterval):
    """An interval argument outside 0..3 found while parsing rules."""

    code = "InvalidInterval"
