"""Production rules over scan context: ``IF <condition> THEN { <action> }``.

Grammar (keywords case-insensitive, ``#`` comments to end of line)::

    rules    := rule+
    rule     := "IF" or_expr "THEN" "{" action_text "}"
    or_expr  := and_expr ("OR" and_expr)*
    and_expr := unary ("AND" unary)*
    unary    := "NOT" unary | atom
    atom     := "(" or_expr ")" | "TRUE" | "FALSE"
              | FIRST "(" int ")" | VISIBLE "(" mac ")" | cmp
    cmp      := term op term          op: > < >= <= = !=
    term     := COUNTER "(" int ")" | RSSI "(" mac ")" | int

Every rule whose condition holds fires; actions come back in source order.
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from datetime import datetime
from typing import Protocol, Sequence, Union

from .errors import IntervalLiteralError, ParseError
from .fingerprint import DEFAULT_FLOOR, Fingerprint, canonical_mac
from .store import TimeInterval


# -- AST ----------------------------------------------------------------------

@dataclass(frozen=True)
class IntLit:
    value: int


@dataclass(frozen=True)
class BoolLit:
    value: bool


@dataclass(frozen=True)
class Counter:
    interval: int


@dataclass(frozen=True)
class Rssi:
    mac: str


@dataclass(frozen=True)
class First:
    interval: int


@dataclass(frozen=True)
class Visible:
    mac: str


@dataclass(frozen=True)
class Compare:
    op: str
    left: Term
    right: Term


@dataclass(frozen=True)
class Not:
    operand: Condition


@dataclass(frozen=True)
class And:
    operands: tuple[Condition, ...]


@dataclass(frozen=True)
class Or:
    operands: tuple[Condition, ...]


Term = Union[IntLit, Counter, Rssi]
Condition = Union[BoolLit, First, Visible, Compare, Not, And, Or]

COMPARISONS = (">=", "<=", "!=", ">", "<", "=")


@dataclass(frozen=True)
class Rule:
    condition: Condition
    action: str
    name: str | None = None
    line: int = field(default=0, compare=False)


# -- lexer --------------------------------------------------------------------

_TOKEN_PATTERNS = [
    ("WS", r"[ \t\r\n]+"),
    ("COMMENT", r"#[^\n]*"),
    ("MAC", r"[0-9A-Fa-f]{2}(?:-[0-9A-Fa-f]{2}){5}(?![0-9A-Za-z_-])"
            r"|[0-9A-Fa-f]{2}(?::[0-9A-Fa-f]{2}){5}(?![0-9A-Za-z_:])"),
    ("INT", r"-?[0-9]+"),
    ("WORD", r"[A-Za-z_][A-Za-z0-9_]*"),
    ("OP", r">=|<=|!=|>|<|="),
    ("LPAREN", r"\("),
    ("RPAREN", r"\)"),
    ("LBRACE", r"\{"),
]
_TOKEN_RE = re.compile("|".join(f"(?P<{name}>{pattern})" for name, pattern in _TOKEN_PATTERNS))
_KEYWORDS = {"IF", "THEN", "AND", "OR", "NOT", "TRUE", "FALSE", "COUNTER", "FIRST", "VISIBLE", "RSSI"}


@dataclass(frozen=True)
class _Token:
    kind: str
    text: str
    pos: int


class _Parser:
    def __init__(self, source: str):
        self.src = source
        self.pos = 0
        self._peeked: _Token | None = None

    # position helpers
    def location(self, pos: int) -> tuple[int, int]:
        line = self.src.count("\n", 0, pos) + 1
        col = pos - (self.src.rfind("\n", 0, pos) + 1) + 1
        return line, col

    def error(self, message: str, pos: int, expected: Sequence[str] = ()) -> ParseError:
        line, col = self.location(pos)
        return ParseError(message, line, col, expected)

    def _lex(self) -> _Token:
        while True:
            if self.pos >= len(self.src):
                return _Token("EOF", "", self.pos)
            m = _TOKEN_RE.match(self.src, self.pos)
            if m is None:
                raise self.error(f"unexpected character {self.src[self.pos]!r}", self.pos)
            self.pos = m.end()
            kind = m.lastgroup
            if kind in ("WS", "COMMENT"):
                continue
            text = m.group()
            if kind == "WORD" and text.upper() in _KEYWORDS:
                return _Token(text.upper(), text, m.start())
            return _Token(kind, text, m.start())

    def peek(self) -> _Token:
        if self._peeked is None:
            self._peeked = self._lex()
        return self._peeked

    def take(self) -> _Token:
        tok = self.peek()
        self._peeked = None
        return tok

    def expect(self, *kinds: str) -> _Token:
        tok = self.peek()
        if tok.kind not in kinds:
            shown = "end of input" if tok.kind == "EOF" else repr(tok.text)
            raise self.error(f"unexpected {shown}", tok.pos, [_display(k) for k in kinds])
        return self.take()

    # grammar
    def rules(self) -> list[Rule]:
        out = [self.rule()]
        while self.peek().kind != "EOF":
            out.append(self.rule())
        return out

    def rule(self) -> Rule:
        start = self.expect("IF")
        cond = self.or_expr()
        self.expect("THEN")
        self.expect("LBRACE")
        action = self.action_text()
        return Rule(cond, action, line=self.location(start.pos)[0])

    def action_text(self) -> str:
        # raw text up to the matching close brace; nested braces allowed
        assert self._peeked is None
        depth = 1
        begin = self.pos
        i = begin
        while i < len(self.src):
            c = self.src[i]
            if c == "{":
                depth += 1
            elif c == "}":
                depth -= 1
                if depth == 0:
                    self.pos = i + 1
                    return self.src[begin:i].strip()
            i += 1
        raise self.error("unterminated action block", len(self.src), ["'}'"])

    def or_expr(self) -> Condition:
        items = [self.and_expr()]
        while self.peek().kind == "OR":
            self.take()
            items.append(self.and_expr())
        return items[0] if len(items) == 1 else Or(tuple(items))

    def and_expr(self) -> Condition:
        items = [self.unary()]
        while self.peek().kind == "AND":
            self.take()
            items.append(self.unary())
        return items[0] if len(items) == 1 else And(tuple(items))

    def unary(self) -> Condition:
        if self.peek().kind == "NOT":
            self.take()
            return Not(self.unary())
        return self.atom()

    def atom(self) -> Condition:
        tok = self.peek()
        if tok.kind == "LPAREN":
            self.take()
            inner = self.or_expr()
            self.expect("RPAREN")
            return inner
        if tok.kind in ("TRUE", "FALSE"):
            self.take()
            return BoolLit(tok.kind == "TRUE")
        if tok.kind == "FIRST":
            self.take()
            return First(self.interval_arg())
        if tok.kind == "VISIBLE":
            self.take()
            return Visible(self.mac_arg())
        if tok.kind in ("COUNTER", "RSSI", "INT"):
            left = self.term()
            op = self.expect("OP").text
            right = self.term()
            return Compare(op, left, right)
        self.expect("LPAREN", "NOT", "TRUE", "FALSE", "FIRST", "VISIBLE", "COUNTER", "RSSI", "INT")
        raise AssertionError("unreachable")

    def term(self) -> Term:
        tok = self.expect("COUNTER", "RSSI", "INT")
        if tok.kind == "COUNTER":
            return Counter(self.interval_arg())
        if tok.kind == "RSSI":
            return Rssi(self.mac_arg())
        return IntLit(int(tok.text))

    def interval_arg(self) -> int:
        self.expect("LPAREN")
        tok = self.expect("INT")
        value = int(tok.text)
        if value not in {i.value for i in TimeInterval}:
            line, col = self.location(tok.pos)
            raise IntervalLiteralError(f"interval code {value} is not one of 0, 1, 2, 3", line, col, ["0", "1", "2", "3"])
        self.expect("RPAREN")
        return value

    def mac_arg(self) -> str:
        self.expect("LPAREN")
        tok = self.expect("MAC")
        self.expect("RPAREN")
        return canonical_mac(tok.text)


_DISPLAY = {
    "LPAREN": "'('", "RPAREN": "')'", "LBRACE": "'{'", "OP": "comparison operator",
    "INT": "integer", "MAC": "MAC address", "EOF": "end of input",
}


def _display(kind: str) -> str:
    return _DISPLAY.get(kind, kind)


def parse_rules(source: str) -> list[Rule]:
    """Parse a rules source into rules, keeping source order."""
    return _Parser(source).rules()


def parse_condition(source: str) -> Condition:
    p = _Parser(source)
    cond = p.or_expr()
    p.expect("EOF")
    return cond


# -- printer ------------------------------------------------------------------

def format_term(term: Term) -> str:
    if isinstance(term, IntLit):
        return str(term.value)
    if isinstance(term, Counter):
        return f"COUNTER({term.interval})"
    if isinstance(term, Rssi):
        return f"RSSI({term.mac})"
    raise TypeError(f"not a term: {term!r}")


_PRECEDENCE = {Or: 1, And: 2, Not: 3}


def format_condition(cond: Condition) -> str:
    """Render ``cond`` in rule syntax; re-parsing gives back the same tree."""
    if isinstance(cond, BoolLit):
        return "TRUE" if cond.value else "FALSE"
    if isinstance(cond, First):
        return f"FIRST({cond.interval})"
    if isinstance(cond, Visible):
        return f"VISIBLE({cond.mac})"
    if isinstance(cond, Compare):
        return f"{format_term(cond.left)} {cond.op} {format_term(cond.right)}"
    if isinstance(cond, Not):
        inner = format_condition(cond.operand)
        if isinstance(cond.operand, (And, Or)):
            inner = f"({inner})"
        return f"NOT {inner}"
    if isinstance(cond, (And, Or)):
        word = " AND " if isinstance(cond, And) else " OR "
        level = _PRECEDENCE[type(cond)]
        parts = []
        for child in cond.operands:
            text = format_condition(child)
            if isinstance(child, (And, Or)) and _PRECEDENCE[type(child)] <= level:
                text = f"({text})"
            parts.append(text)
        return word.join(parts)
    raise TypeError(f"not a condition: {cond!r}")


def format_rule(rule: Rule) -> str:
    return f"IF {format_condition(rule.condition)} THEN {{ {rule.action} }}"


def format_rules(rules: Sequence[Rule]) -> str:
    return "\n".join(format_rule(r) for r in rules) + ("\n" if rules else "")


# -- evaluation ---------------------------------------------------------------

class HistoryStore(Protocol):
    def count_scans(self, user_token: str, interval: int, now: datetime) -> int: ...

    def is_first_scan(self, user_token: str, interval: int, now: datetime, *,
                      exclude_id: str | None = None) -> bool: ...


@dataclass(frozen=True)
class EvalContext:
    """Everything a condition may look at.

    ``event_id`` is set when evaluating an already-stored scan so FIRST does
    not count that scan against itself.
    """

    user_token: str
    now: datetime
    store: HistoryStore
    fingerprint: Fingerprint
    rssi_floor: int = DEFAULT_FLOOR
    event_id: str | None = None


def _term_value(term: Term, ctx: EvalContext) -> int:
    if isinstance(term, IntLit):
        return term.value
    if isinstance(term, Counter):
        return ctx.store.count_scans(ctx.user_token, term.interval, ctx.now)
    if isinstance(term, Rssi):
        obs = ctx.fingerprint.get(term.mac)
        return obs.rssi if obs is not None else ctx.rssi_floor
    raise TypeError(f"not a term: {term!r}")


def _compare(op: str, a: int, b: int) -> bool:
    if op == ">":
        return a > b
    if op == "<":
        return a < b
    if op == ">=":
        return a >= b
    if op == "<=":
        return a <= b
    if op == "=":
        return a == b
    if op == "!=":
        return a != b
    raise ValueError(f"unknown comparison {op!r}")


def evaluate_condition(cond: Condition, ctx: EvalContext) -> bool:
    if isinstance(cond, BoolLit):
        return cond.value
    if isinstance(cond, First):
        return ctx.store.is_first_scan(ctx.user_token, cond.interval, ctx.now, exclude_id=ctx.event_id)
    if isinstance(cond, Visible):
        return ctx.fingerprint.get(cond.mac) is not None
    if isinstance(cond, Compare):
        return _compare(cond.op, _term_value(cond.left, ctx), _term_value(cond.right, ctx))
    if isinstance(cond, Not):
        return not evaluate_condition(cond.operand, ctx)
    if isinstance(cond, And):
        return all(evaluate_condition(c, ctx) for c in cond.operands)
    if isinstance(cond, Or):
        return any(evaluate_condition(c, ctx) for c in cond.operands)
    raise TypeError(f"not a condition: {cond!r}")


def evaluate_all(rules: Sequence[Rule], ctx: EvalContext) -> list[str]:
    """Actions of every rule whose condition holds, in declaration order."""
    return [r.action for r in rules if evaluate_condition(r.condition, ctx)]
