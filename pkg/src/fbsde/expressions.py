"""Arithmetic expressions for model coefficients.

The grammar is deliberately tiny and total:

    expr   := term (('+'|'-') term)*
    term   := factor (('*'|'/') factor)*
    factor := ['-'] atom
    atom   := number | ident | ident '(' args ')' | '(' expr ')'

Identifiers are case-sensitive. Variables are ``t``, ``y``, ``k``, ``q``,
``e`` plus coordinates ``x``/``x1``.../``z``/``z1``...; functions are
``abs, min, max, exp, sin, cos, tanh, cap1`` where ``cap1(v) = min(1, |v|)``.
"""

from __future__ import annotations

import re
from dataclasses import dataclass

import numpy as np

__all__ = [
    "ExpressionError",
    "Num",
    "Var",
    "Neg",
    "BinOp",
    "Call",
    "parse_expr",
    "to_text",
    "evaluate",
    "variables",
    "FUNCTIONS",
]


class ExpressionError(ValueError):
    """Parse or evaluation failure; carries the byte offset when parsing."""

    def __init__(self, message: str, offset: int | None = None):
        if offset is not None:
            message = f"{message} at offset {offset}"
        super().__init__(message)
        self.offset = offset


@dataclass(frozen=True)
class Num:
    value: float


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "Expr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * /
    left: "Expr"
    right: "Expr"


@dataclass(frozen=True)
class Call:
    name: str
    args: tuple


Expr = Num | Var | Neg | BinOp | Call

FUNCTIONS = {
    "abs": (1, np.abs),
    "min": (2, np.minimum),
    "max": (2, np.maximum),
    "exp": (1, np.exp),
    "sin": (1, np.sin),
    "cos": (1, np.cos),
    "tanh": (1, np.tanh),
    "cap1": (1, lambda v: np.minimum(1.0, np.abs(v))),
}

_VAR_RE = re.compile(r"(t|y|k|q|e|x\d*|z\d*)\Z")
_TOKEN_RE = re.compile(
    r"\s*(?:(?P<num>(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?)"
    r"|(?P<ident>[A-Za-z_][A-Za-z_0-9]*)"
    r"|(?P<punct>[-+*/(),]))"
)


def _tokenize(text: str) -> list[tuple[str, str, int]]:
    tokens = []
    pos = 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            stripped = text[pos:].lstrip()
            if not stripped:
                break
            raise ExpressionError(f"unexpected character {stripped[0]!r}",
                                  len(text) - len(stripped))
        kind = m.lastgroup
        tokens.append((kind, m.group(kind), m.start(kind)))
        pos = m.end()
    tokens.append(("end", "", len(text)))
    return tokens


class _Parser:
    def __init__(self, text: str):
        self.text = text
        self.tokens = _tokenize(text)
        self.i = 0

    def peek(self):
        return self.tokens[self.i]

    def advance(self):
        tok = self.tokens[self.i]
        self.i += 1
        return tok

    def expect_punct(self, ch: str):
        kind, val, off = self.peek()
        if kind != "punct" or val != ch:
            raise ExpressionError(f"expected {ch!r}", off)
        return self.advance()

    def parse(self) -> Expr:
        node = self.expr()
        kind, val, off = self.peek()
        if kind != "end":
            raise ExpressionError(f"unexpected token {val!r}", off)
        return node

    def expr(self) -> Expr:
        node = self.term()
        while True:
            kind, val, _ = self.peek()
            if kind == "punct" and val in "+-":
                self.advance()
                node = BinOp(val, node, self.term())
            else:
                return node

    def term(self) -> Expr:
        node = self.factor()
        while True:
            kind, val, _ = self.peek()
            if kind == "punct" and val in "*/":
                self.advance()
                node = BinOp(val, node, self.factor())
            else:
                return node

    def factor(self) -> Expr:
        kind, val, _ = self.peek()
        if kind == "punct" and val == "-":
            self.advance()
            return Neg(self.atom())
        return self.atom()

    def atom(self) -> Expr:
        kind, val, off = self.advance()
        if kind == "num":
            return Num(float(val))
        if kind == "ident":
            nk, nv, _ = self.peek()
            if nk == "punct" and nv == "(":
                return self.call(val, off)
            if val in FUNCTIONS:
                raise ExpressionError(f"function {val!r} needs arguments", off)
            if not _VAR_RE.match(val):
                raise ExpressionError(f"unknown identifier {val!r}", off)
            return Var(val)
        if kind == "punct" and val == "(":
            node = self.expr()
            self.expect_punct(")")
            return node
        if kind == "end":
            raise ExpressionError("unexpected end of input", off)
        raise ExpressionError(f"unexpected token {val!r}", off)

    def call(self, name: str, off: int) -> Expr:
        if name not in FUNCTIONS:
            raise ExpressionError(f"unknown function {name!r}", off)
        self.expect_punct("(")
        args = [self.expr()]
        while True:
            kind, val, _ = self.peek()
            if kind == "punct" and val == ",":
                self.advance()
                args.append(self.expr())
            else:
                break
        self.expect_punct(")")
        arity = FUNCTIONS[name][0]
        if len(args) != arity:
            raise ExpressionError(
                f"{name} takes {arity} argument(s), got {len(args)}", off)
        return Call(name, tuple(args))


def parse_expr(text: str) -> Expr:
    """Parse ``text`` into an AST; raises ExpressionError with offset."""
    if not isinstance(text, str) or not text.strip():
        raise ExpressionError("empty expression", 0)
    return _Parser(text).parse()


_PREC = {"+": 1, "-": 1, "*": 2, "/": 2}


def _prec(node: Expr) -> int:
    if isinstance(node, BinOp):
        return _PREC[node.op]
    if isinstance(node, Neg):
        return 3
    return 4


def to_text(node: Expr) -> str:
    """Canonical text form; ``parse_expr(to_text(a)) == a`` for any AST."""
    if isinstance(node, Num):
        return repr(node.value)
    if isinstance(node, Var):
        return node.name
    if isinstance(node, Neg):
        inner = to_text(node.operand)
        if _prec(node.operand) < 4:
            inner = f"({inner})"
        return f"-{inner}"
    if isinstance(node, BinOp):
        p = _PREC[node.op]
        left = to_text(node.left)
        if _prec(node.left) < p:
            left = f"({left})"
        right = to_text(node.right)
        if _prec(node.right) <= p:
            right = f"({right})"
        sep = f" {node.op} " if p == 1 else node.op
        return f"{left}{sep}{right}"
    if isinstance(node, Call):
        return f"{node.name}({', '.join(to_text(a) for a in node.args)})"
    raise TypeError(f"not an expression node: {node!r}")


def variables(node: Expr) -> set[str]:
    if isinstance(node, Var):
        return {node.name}
    if isinstance(node, Neg):
        return variables(node.operand)
    if isinstance(node, BinOp):
        return variables(node.left) | variables(node.right)
    if isinstance(node, Call):
        out: set[str] = set()
        for a in node.args:
            out |= variables(a)
        return out
    return set()


def evaluate(node: Expr, env: dict):
    """Evaluate over scalars or numpy arrays; names come from ``env``."""
    if isinstance(node, Num):
        return node.value
    if isinstance(node, Var):
        try:
            return env[node.name]
        except KeyError:
            raise ExpressionError(f"variable {node.name!r} not bound") from None
    if isinstance(node, Neg):
        return -evaluate(node.operand, env)
    if isinstance(node, BinOp):
        left = evaluate(node.left, env)
        right = evaluate(node.right, env)
        if node.op == "+":
            return left + right
        if node.op == "-":
            return left - right
        if node.op == "*":
            return left * right
        return left / right
    if isinstance(node, Call):
        fn = FUNCTIONS[node.name][1]
        return fn(*(evaluate(a, env) for a in node.args))
    raise TypeError(f"not an expression node: {node!r}")
