"""Falsification-criterion predicates: tokenizer, recursive-descent parser, printer, evaluator.

Grammar (``not`` binds tighter than ``and``, which binds tighter than ``or``;
binary operators associate to the left)::

    expr    := orexpr
    orexpr  := andexpr ('or' andexpr)*
    andexpr := unary ('and' unary)*
    unary   := 'not' unary | '(' expr ')' | cmp
    cmp     := operand op (operand | number)
    operand := metric | 'abs' '(' metric ['-' metric] ')'
    op      := '<' | '<=' | '>' | '>=' | '=='

Metrics are dotted identifiers. There is no other arithmetic: any constant a
criterion depends on must be declared by name (``threshold.<name>``).
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Callable, Mapping, Union

from .errors import ParseError, UnknownMetric

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>\s+)
  | (?P<number>\d+(?:\.\d*)?(?:[eE][+-]?\d+)?|\.\d+(?:[eE][+-]?\d+)?)
  | (?P<name>[A-Za-z_][A-Za-z0-9_]*(?:\.[A-Za-z_][A-Za-z0-9_]*)*)
  | (?P<op><=|>=|==|<|>)
  | (?P<lparen>\()
  | (?P<rparen>\))
  | (?P<minus>-)
    """,
    re.VERBOSE,
)

KEYWORDS = {"and", "or", "not", "abs"}
OPS = ("<", "<=", ">", ">=", "==")


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    pos: int


def tokenize(text: str) -> list[Token]:
    out = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if not m:
            raise ParseError(f"unexpected character {text[pos]!r} at position {pos}", None, pos)
        kind = m.lastgroup
        if kind != "ws":
            value = m.group()
            if kind == "name" and value in KEYWORDS:
                kind = value
            out.append(Token(kind, value, pos))
        pos = m.end()
    out.append(Token("end", "", len(text)))
    return out


@dataclass(frozen=True)
class Metric:
    name: str


@dataclass(frozen=True)
class Number:
    value: float


@dataclass(frozen=True)
class Abs:
    left: Metric
    right: Metric | None = None


Operand = Union[Metric, Number, Abs]


@dataclass(frozen=True)
class Compare:
    op: str
    left: Operand
    right: Operand


@dataclass(frozen=True)
class Not:
    expr: "Expr"


@dataclass(frozen=True)
class And:
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Or:
    left: "Expr"
    right: "Expr"


Expr = Union[Compare, Not, And, Or]


class _Parser:
    def __init__(self, text: str):
        self.tokens = tokenize(text)
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def take(self, kind: str) -> Token:
        tok = self.peek()
        if tok.kind != kind:
            what = tok.text or "end of input"
            raise ParseError(f"expected {kind}, found {what!r} at position {tok.pos}", None, tok.pos)
        self.i += 1
        return tok

    def parse(self) -> Expr:
        expr = self.orexpr()
        tok = self.peek()
        if tok.kind != "end":
            raise ParseError(f"unexpected {tok.text!r} at position {tok.pos}", None, tok.pos)
        return expr

    def orexpr(self) -> Expr:
        left = self.andexpr()
        while self.peek().kind == "or":
            self.i += 1
            left = Or(left, self.andexpr())
        return left

    def andexpr(self) -> Expr:
        left = self.unary()
        while self.peek().kind == "and":
            self.i += 1
            left = And(left, self.unary())
        return left

    def unary(self) -> Expr:
        tok = self.peek()
        if tok.kind == "not":
            self.i += 1
            return Not(self.unary())
        if tok.kind == "lparen":
            self.i += 1
            inner = self.orexpr()
            self.take("rparen")
            return inner
        return self.compare()

    def compare(self) -> Compare:
        left = self.operand()
        tok = self.peek()
        if tok.kind != "op":
            raise ParseError(f"expected comparison operator at position {tok.pos}", None, tok.pos)
        self.i += 1
        nxt = self.peek()
        if nxt.kind in ("number", "minus"):
            right: Operand = self.number()
        else:
            right = self.operand()
        return Compare(tok.text, left, right)

    def number(self) -> Number:
        sign = 1.0
        if self.peek().kind == "minus":
            self.i += 1
            sign = -1.0
        tok = self.take("number")
        return Number(sign * float(tok.text))

    def metric(self) -> Metric:
        tok = self.peek()
        if tok.kind != "name":
            raise ParseError(f"expected a metric name at position {tok.pos}", None, tok.pos)
        if "." not in tok.text:
            raise ParseError(f"metric names are dotted (namespace.name); got {tok.text!r}", None, tok.pos)
        self.i += 1
        return Metric(tok.text)

    def operand(self) -> Operand:
        tok = self.peek()
        if tok.kind == "abs":
            self.i += 1
            self.take("lparen")
            left = self.metric()
            right = None
            if self.peek().kind == "minus":
                self.i += 1
                right = self.metric()
            self.take("rparen")
            return Abs(left, right)
        if tok.kind == "number":
            raise ParseError(f"numbers may only appear on the right of a comparison (position {tok.pos})", None, tok.pos)
        return self.metric()


def metrics_of(node) -> list[str]:
    """Metric names referenced, in order of first appearance."""
    seen: list[str] = []

    def walk(n):
        if isinstance(n, Metric):
            if n.name not in seen:
                seen.append(n.name)
        elif isinstance(n, Abs):
            walk(n.left)
            if n.right is not None:
                walk(n.right)
        elif isinstance(n, Compare):
            walk(n.left)
            walk(n.right)
        elif isinstance(n, Not):
            walk(n.expr)
        elif isinstance(n, (And, Or)):
            walk(n.left)
            walk(n.right)

    walk(node)
    return seen


def parse_criterion(text: str, namespace: Callable[[str], bool] | None = None) -> Expr:
    """Parse a predicate; with ``namespace`` every metric must be accepted by it."""
    expr = _Parser(text).parse()
    if namespace is not None:
        for name in metrics_of(expr):
            if not namespace(name):
                raise UnknownMetric(name, text.find(name))
    return expr


def to_text(node) -> str:
    if isinstance(node, Metric):
        return node.name
    if isinstance(node, Number):
        return repr(node.value)
    if isinstance(node, Abs):
        inner = node.left.name if node.right is None else f"{node.left.name} - {node.right.name}"
        return f"abs({inner})"
    if isinstance(node, Compare):
        return f"{to_text(node.left)} {node.op} {to_text(node.right)}"
    if isinstance(node, Not):
        return f"not ({to_text(node.expr)})"
    if isinstance(node, And):
        left = f"({to_text(node.left)})" if isinstance(node.left, Or) else to_text(node.left)
        right = f"({to_text(node.right)})" if isinstance(node.right, (And, Or)) else to_text(node.right)
        return f"{left} and {right}"
    if isinstance(node, Or):
        right = f"({to_text(node.right)})" if isinstance(node.right, Or) else to_text(node.right)
        return f"{to_text(node.left)} or {right}"
    raise TypeError(f"not a criterion node: {node!r}")


class MissingMetric(KeyError):
    pass


def _value(node, metrics: Mapping[str, float]) -> float:
    if isinstance(node, Number):
        return node.value
    if isinstance(node, Metric):
        if node.name not in metrics:
            raise MissingMetric(node.name)
        return float(metrics[node.name])
    if isinstance(node, Abs):
        a = _value(node.left, metrics)
        return abs(a if node.right is None else a - _value(node.right, metrics))
    raise TypeError(node)


def evaluate_expr(node, metrics: Mapping[str, float]) -> bool:
    if isinstance(node, Compare):
        a, b = _value(node.left, metrics), _value(node.right, metrics)
        return {"<": a < b, "<=": a <= b, ">": a > b, ">=": a >= b, "==": a == b}[node.op]
    if isinstance(node, Not):
        return not evaluate_expr(node.expr, metrics)
    if isinstance(node, And):
        return evaluate_expr(node.left, metrics) and evaluate_expr(node.right, metrics)
    if isinstance(node, Or):
        return evaluate_expr(node.left, metrics) or evaluate_expr(node.right, metrics)
    raise TypeError(node)
