"""Integer and boolean expressions used in node labels.

Expressions are small frozen dataclasses.  The tokenizer and the
expression grammar live here so that both the graph interchange format
(labels carry expressions as strings) and the structured language can
share them.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from typing import Mapping, Union


class EvaluationError(ArithmeticError):
    """Raised when an expression is undefined in a store (division by zero)."""


class ParseError(ValueError):
    """A positioned syntax error."""

    def __init__(self, line: int, col: int, expected: str, found: str = ""):
        self.line = line
        self.col = col
        self.expected = expected
        self.found = found
        msg = f"{line}:{col}: expected {expected}"
        if found:
            msg += f", found {found!r}"
        super().__init__(msg)


# --- AST -------------------------------------------------------------------

@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class Var:
    name: str


@dataclass(frozen=True)
class Neg:
    operand: "ArithExpr"


@dataclass(frozen=True)
class BinOp:
    op: str  # one of + - * / %
    left: "ArithExpr"
    right: "ArithExpr"


@dataclass(frozen=True)
class BoolConst:
    value: bool


@dataclass(frozen=True)
class Cmp:
    op: str  # one of < <= > >= == !=
    left: "ArithExpr"
    right: "ArithExpr"


@dataclass(frozen=True)
class Not:
    operand: "BoolExpr"


@dataclass(frozen=True)
class And:
    left: "BoolExpr"
    right: "BoolExpr"


@dataclass(frozen=True)
class Or:
    left: "BoolExpr"
    right: "BoolExpr"


ArithExpr = Union[Const, Var, Neg, BinOp]
BoolExpr = Union[BoolConst, Cmp, Not, And, Or]
Expr = Union[ArithExpr, BoolExpr]

_ARITH = (Const, Var, Neg, BinOp)
_BOOL = (BoolConst, Cmp, Not, And, Or)


def is_arith(e: Expr) -> bool:
    return isinstance(e, _ARITH)


def is_bool(e: Expr) -> bool:
    return isinstance(e, _BOOL)


def free_vars(e: Expr) -> frozenset[str]:
    if isinstance(e, Var):
        return frozenset((e.name,))
    if isinstance(e, (Const, BoolConst)):
        return frozenset()
    if isinstance(e, (Neg, Not)):
        return free_vars(e.operand)
    return free_vars(e.left) | free_vars(e.right)


def _div(a: int, b: int) -> int:
    if b == 0:
        raise EvaluationError("division by zero")
    # truncate toward zero, C-style
    q = abs(a) // abs(b)
    return q if (a >= 0) == (b >= 0) else -q


def _mod(a: int, b: int) -> int:
    if b == 0:
        raise EvaluationError("modulo by zero")
    return a - b * _div(a, b)


_ARITH_OPS = {
    "+": lambda a, b: a + b,
    "-": lambda a, b: a - b,
    "*": lambda a, b: a * b,
    "/": _div,
    "%": _mod,
}

_CMP_OPS = {
    "<": lambda a, b: a < b,
    "<=": lambda a, b: a <= b,
    ">": lambda a, b: a > b,
    ">=": lambda a, b: a >= b,
    "==": lambda a, b: a == b,
    "!=": lambda a, b: a != b,
}


def evaluate(e: Expr, env: Mapping[str, int]):
    """Evaluate `e` in `env`; integers for arithmetic, bools for conditions."""
    if isinstance(e, Const):
        return e.value
    if isinstance(e, Var):
        return env[e.name]
    if isinstance(e, Neg):
        return -evaluate(e.operand, env)
    if isinstance(e, BinOp):
        return _ARITH_OPS[e.op](evaluate(e.left, env), evaluate(e.right, env))
    if isinstance(e, BoolConst):
        return e.value
    if isinstance(e, Cmp):
        return _CMP_OPS[e.op](evaluate(e.left, env), evaluate(e.right, env))
    if isinstance(e, Not):
        return not evaluate(e.operand, env)
    if isinstance(e, And):
        return evaluate(e.left, env) and evaluate(e.right, env)
    if isinstance(e, Or):
        return evaluate(e.left, env) or evaluate(e.right, env)
    raise TypeError(f"not an expression: {e!r}")


def negate(b: BoolExpr) -> BoolExpr:
    return b.operand if isinstance(b, Not) else Not(b)


# --- printing --------------------------------------------------------------

# binding strength; higher binds tighter
_PREC = {"or": 1, "and": 2, "not": 3, "cmp": 4, "+": 5, "-": 5, "*": 6, "/": 6, "%": 6, "neg": 7}


def _prec(e: Expr) -> int:
    if isinstance(e, Or):
        return 1
    if isinstance(e, And):
        return 2
    if isinstance(e, Not):
        return 3
    if isinstance(e, Cmp):
        return 4
    if isinstance(e, BinOp):
        return _PREC[e.op]
    if isinstance(e, Neg):
        return 7
    return 8


def show(e: Expr) -> str:
    """Render with the minimal parentheses that re-parse to the same tree."""

    def wrap(sub: Expr, need: int) -> str:
        s = show(sub)
        return f"({s})" if _prec(sub) < need else s

    if isinstance(e, Const):
        return str(e.value) if e.value >= 0 else f"({e.value})"
    if isinstance(e, Var):
        return e.name
    if isinstance(e, BoolConst):
        return "true" if e.value else "false"
    if isinstance(e, Neg):
        return "-" + wrap(e.operand, 8)
    if isinstance(e, Not):
        return "!" + wrap(e.operand, 4)
    if isinstance(e, BinOp):
        p = _PREC[e.op]
        # left-associative: right operand needs strictly tighter binding
        return f"{wrap(e.left, p)} {e.op} {wrap(e.right, p + 1)}"
    if isinstance(e, Cmp):
        return f"{wrap(e.left, 5)} {e.op} {wrap(e.right, 5)}"
    if isinstance(e, And):
        return f"{wrap(e.left, 2)} && {wrap(e.right, 3)}"
    if isinstance(e, Or):
        return f"{wrap(e.left, 1)} || {wrap(e.right, 2)}"
    raise TypeError(f"not an expression: {e!r}")


# --- tokens ----------------------------------------------------------------

KEYWORDS = frozenset(
    "if else while observe skip return uniform true false and or not".split()
)

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<comment>\#[^\n]*)
  | (?P<newline>\n)
  | (?P<number>\d+)
  | (?P<ident>[A-Za-z_][A-Za-z_0-9]*)
  | (?P<op>:=|\.\.|<=|>=|==|!=|&&|\|\||[-+*/%<>(){}:;,~!≥≤≠∧∨¬])
    """,
    re.VERBOSE,
)

_UNICODE_OPS = {"≥": ">=", "≤": "<=", "≠": "!=", "∧": "&&", "∨": "||", "¬": "!"}


@dataclass(frozen=True)
class Token:
    kind: str  # number, ident, keyword, op, newline, eof
    text: str
    line: int
    col: int


def tokenize(src: str) -> list[Token]:
    out: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(src):
        m = _TOKEN_RE.match(src, pos)
        col = pos - line_start + 1
        if m is None:
            raise ParseError(line, col, "a token", src[pos])
        kind = m.lastgroup
        text = m.group()
        if kind == "newline":
            out.append(Token("newline", text, line, col))
            line += 1
            line_start = m.end()
        elif kind == "number":
            out.append(Token("number", text, line, col))
        elif kind == "ident":
            out.append(Token("keyword" if text in KEYWORDS else "ident", text, line, col))
        elif kind == "op":
            out.append(Token("op", _UNICODE_OPS.get(text, text), line, col))
        pos = m.end()
    out.append(Token("eof", "", line, pos - line_start + 1))
    return out


class TokenStream:
    """Cursor over a token list with the usual peek/expect helpers."""

    def __init__(self, tokens: list[Token]):
        self.tokens = tokens
        self.i = 0

    def peek(self) -> Token:
        return self.tokens[self.i]

    def next(self) -> Token:
        tok = self.tokens[self.i]
        if tok.kind != "eof":
            self.i += 1
        return tok

    def at(self, text: str) -> bool:
        tok = self.peek()
        return tok.kind in ("op", "keyword") and tok.text == text

    def accept(self, text: str) -> bool:
        if self.at(text):
            self.next()
            return True
        return False

    def expect(self, text: str) -> Token:
        if not self.at(text):
            self.fail(repr(text))
        return self.next()

    def fail(self, expected: str):
        tok = self.peek()
        raise ParseError(tok.line, tok.col, expected, tok.text or "end of input")


# --- expression grammar ------------------------------------------------------
#
#   expr    := or
#   or      := and ( ('||' | 'or') and )*
#   and     := not ( ('&&' | 'and') not )*
#   not     := ('!' | 'not') not | cmp
#   cmp     := sum ( relop sum )?
#   sum     := term ( ('+' | '-') term )*
#   term    := unary ( ('*' | '/' | '%') unary )*
#   unary   := '-' unary | atom
#   atom    := NUMBER | IDENT | 'true' | 'false' | '(' expr ')'

_RELOPS = ("<=", ">=", "==", "!=", "<", ">")


def parse_expression(ts: TokenStream) -> Expr:
    return _or(ts)


def _or(ts):
    left = _and(ts)
    while ts.accept("||") or ts.accept("or"):
        left = Or(_need_bool(ts, left), _need_bool(ts, _and(ts)))
    return left


def _and(ts):
    left = _not(ts)
    while ts.accept("&&") or ts.accept("and"):
        left = And(_need_bool(ts, left), _need_bool(ts, _not(ts)))
    return left


def _not(ts):
    if ts.accept("!") or ts.accept("not"):
        return Not(_need_bool(ts, _not(ts)))
    return _cmp(ts)


def _cmp(ts):
    left = _sum(ts)
    for op in _RELOPS:
        if ts.accept(op):
            return Cmp(op, _need_arith(ts, left), _need_arith(ts, _sum(ts)))
    return left


def _sum(ts):
    left = _term(ts)
    while ts.at("+") or ts.at("-"):
        op = ts.next().text
        left = BinOp(op, _need_arith(ts, left), _need_arith(ts, _term(ts)))
    return left


def _term(ts):
    left = _unary(ts)
    while ts.at("*") or ts.at("/") or ts.at("%"):
        op = ts.next().text
        left = BinOp(op, _need_arith(ts, left), _need_arith(ts, _unary(ts)))
    return left


def _unary(ts):
    if ts.accept("-"):
        operand = _need_arith(ts, _unary(ts))
        if isinstance(operand, Const):
            return Const(-operand.value)
        return Neg(operand)
    return _atom(ts)


def _atom(ts):
    tok = ts.peek()
    if tok.kind == "number":
        ts.next()
        return Const(int(tok.text))
    if tok.kind == "ident":
        ts.next()
        return Var(tok.text)
    if ts.accept("true"):
        return BoolConst(True)
    if ts.accept("false"):
        return BoolConst(False)
    if ts.accept("("):
        e = parse_expression(ts)
        ts.expect(")")
        return e
    ts.fail("an expression")


def _need_bool(ts, e):
    if not is_bool(e):
        ts.fail("a boolean expression")
    return e


def _need_arith(ts, e):
    if not is_arith(e):
        ts.fail("an arithmetic expression")
    return e


def _parse_whole(text: str) -> Expr:
    ts = TokenStream([t for t in tokenize(text) if t.kind != "newline"])
    e = parse_expression(ts)
    if ts.peek().kind != "eof":
        ts.fail("end of expression")
    return e


def parse_arith(text: str) -> ArithExpr:
    e = _parse_whole(text)
    if not is_arith(e):
        raise ParseError(1, 1, "an arithmetic expression", text)
    return e


def parse_bool(text: str) -> BoolExpr:
    e = _parse_whole(text)
    if not is_bool(e):
        raise ParseError(1, 1, "a boolean expression", text)
    return e

