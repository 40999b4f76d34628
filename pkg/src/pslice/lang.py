"""A small structured probabilistic language and its translation to pCFGs.

Example::

    x ~ uniform(0..3)
    y ~ {0: 1/2, 1: 1/2}
    if x >= 2 {
        observe(y == 1)
    }
    return x

Statements are separated by newlines or ``;``.  See docs/grammar.md.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from itertools import count
from typing import Iterable, Iterator, Optional, Union

from . import expr as ex
from .expr import ParseError, TokenStream
from .pcfg import (PCFG, Assign, Branch, DistExpr, Observe, RandomAssign, Return,
                   Skip, make_pcfg)


@dataclass(frozen=True)
class AssignStmt:
    var: str
    expr: ex.ArithExpr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class RandomStmt:
    var: str
    dist: DistExpr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ObserveStmt:
    cond: ex.BoolExpr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class IfStmt:
    cond: ex.BoolExpr
    then: tuple["Stmt", ...]
    orelse: tuple["Stmt", ...] = ()  # empty: no else arm
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class WhileStmt:
    cond: ex.BoolExpr
    body: tuple["Stmt", ...]
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class SkipStmt:
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class ReturnStmt:
    var: str
    line: int = field(default=0, compare=False)


Stmt = Union[AssignStmt, RandomStmt, ObserveStmt, IfStmt, WhileStmt, SkipStmt, ReturnStmt]


@dataclass(frozen=True)
class Program:
    statements: tuple[Stmt, ...]


class Unstructured(ValueError):
    """The graph was not produced by :func:`to_pcfg`."""


# --- parsing -------------------------------------------------------------------

class _Parser:
    def __init__(self, src: str):
        self.ts = TokenStream(ex.tokenize(src))

    def _skip_separators(self) -> bool:
        seen = False
        while self.ts.peek().kind == "newline" or self.ts.at(";"):
            self.ts.next()
            seen = True
        return seen

    def _skip_newlines(self):
        while self.ts.peek().kind == "newline":
            self.ts.next()

    def program(self) -> Program:
        stmts = self._sequence(closer=None)
        if not stmts or not isinstance(stmts[-1], ReturnStmt):
            tok = self.ts.peek()
            raise ParseError(tok.line, tok.col, "'return' as the final statement")
        return Program(stmts)

    def _sequence(self, closer: Optional[str]) -> tuple[Stmt, ...]:
        stmts: list[Stmt] = []
        self._skip_separators()
        while not (self.ts.peek().kind == "eof" or (closer and self.ts.at(closer))):
            if stmts and isinstance(stmts[-1], ReturnStmt):
                self.ts.fail("end of program after 'return'")
            stmts.append(self._statement(top_level=closer is None))
            if not self._skip_separators():
                break
        return tuple(stmts)

    def _block(self) -> tuple[Stmt, ...]:
        open_tok = self.ts.expect("{")
        stmts = self._sequence(closer="}")
        self.ts.expect("}")
        if not stmts:
            raise ParseError(open_tok.line, open_tok.col, "a non-empty block (write 'skip')")
        return stmts

    def _bool(self) -> ex.BoolExpr:
        e = ex.parse_expression(self.ts)
        if not ex.is_bool(e):
            self.ts.fail("a boolean expression")
        return e

    def _statement(self, top_level: bool) -> Stmt:
        tok = self.ts.peek()
        line = tok.line
        if tok.kind == "ident":
            self.ts.next()
            if self.ts.accept(":="):
                e = ex.parse_expression(self.ts)
                if not ex.is_arith(e):
                    self.ts.fail("an arithmetic expression")
                return AssignStmt(tok.text, e, line)
            if self.ts.accept("~"):
                return RandomStmt(tok.text, self._dist(), line)
            self.ts.fail("':=' or '~'")
        if self.ts.accept("observe"):
            return ObserveStmt(self._bool(), line)
        if self.ts.accept("if"):
            return self._if(line)
        if self.ts.accept("while"):
            cond = self._bool()
            return WhileStmt(cond, self._block(), line)
        if self.ts.accept("skip"):
            return SkipStmt(line)
        if self.ts.at("return"):
            if not top_level:
                self.ts.fail("a statement ('return' only at the end of the program)")
            self.ts.next()
            name = self.ts.peek()
            if name.kind != "ident":
                self.ts.fail("a variable name")
            self.ts.next()
            return ReturnStmt(name.text, line)
        self.ts.fail("a statement")

    def _if(self, line: int) -> IfStmt:
        cond = self._bool()
        then = self._block()
        # 'else' may sit on the next line
        mark = self.ts.i
        self._skip_newlines()
        if self.ts.accept("else"):
            if self.ts.at("if"):
                inner_line = self.ts.next().line
                return IfStmt(cond, then, (self._if(inner_line),), line)
            return IfStmt(cond, then, self._block(), line)
        self.ts.i = mark
        return IfStmt(cond, then, (), line)

    def _int(self) -> int:
        neg = self.ts.accept("-")
        tok = self.ts.peek()
        if tok.kind != "number":
            self.ts.fail("an integer")
        self.ts.next()
        return -int(tok.text) if neg else int(tok.text)

    def _dist(self) -> DistExpr:
        start = self.ts.peek()
        if self.ts.accept("uniform"):
            self.ts.expect("(")
            lo = self._int()
            self.ts.expect("..")
            hi = self._int()
            self.ts.expect(")")
            if hi < lo:
                raise ParseError(start.line, start.col, "a non-empty range")
            return DistExpr.uniform(lo, hi)
        self.ts.expect("{")
        weights: dict[int, Fraction] = {}
        while True:
            self._skip_newlines()
            value = self._int()
            self.ts.expect(":")
            num = self._int()
            den = self._int() if self.ts.accept("/") else 1
            if den == 0 or num < 0:
                raise ParseError(start.line, start.col, "a non-negative rational")
            weights[value] = weights.get(value, Fraction(0)) + Fraction(num, den)
            self._skip_newlines()
            if not self.ts.accept(","):
                break
        self.ts.expect("}")
        try:
            return DistExpr.of(weights)
        except ValueError as err:
            raise ParseError(start.line, start.col, f"a distribution summing to 1 ({err})")


def parse(src: str) -> Program:
    """Parse source text; raises :class:`ParseError` with line and column."""
    parser = _Parser(src)
    prog = parser.program()
    if parser.ts.peek().kind != "eof":
        parser.ts.fail("end of input")
    return prog


# --- translation -------------------------------------------------------------------

def _children(s: Stmt) -> Iterator[tuple[Stmt, ...]]:
    if isinstance(s, IfStmt):
        yield s.then
        yield s.orelse
    elif isinstance(s, WhileStmt):
        yield s.body


def number(program: Program) -> dict[tuple[int, ...], int]:
    """Node ids in source (pre-)order, starting at 1, keyed by statement path.

    A path alternates statement index and child-block index, e.g.
    ``(2, 0, 1)`` is the second statement of the first block of the third
    top-level statement.
    """
    ids: dict[tuple[int, ...], int] = {}
    counter = count(1)

    def walk(stmts, prefix):
        for i, s in enumerate(stmts):
            ids[prefix + (i,)] = next(counter)
            for b, block in enumerate(_children(s)):
                walk(block, prefix + (i, b))

    walk(program.statements, ())
    return ids


def to_pcfg(program: Program) -> PCFG:
    """Translate to a pCFG.

    Sequencing chains nodes; ``if`` becomes a branch whose arms meet at
    the following statement (an absent ``else`` arm is a direct false
    edge); ``while`` becomes a branch with a back edge from the end of
    its body; ``return x`` becomes End.
    """
    ids = number(program)
    labels = {}
    succ: dict[int, tuple[int, ...]] = {}
    loop_lines = {}

    def wire(stmts, prefix, cont):
        for i, s in enumerate(stmts):
            v = ids[prefix + (i,)]
            nxt = ids[prefix + (i + 1,)] if i + 1 < len(stmts) else cont
            here = prefix + (i,)
            if isinstance(s, AssignStmt):
                labels[v], succ[v] = Assign(s.var, s.expr), (nxt,)
            elif isinstance(s, RandomStmt):
                labels[v], succ[v] = RandomAssign(s.var, s.dist), (nxt,)
            elif isinstance(s, ObserveStmt):
                labels[v], succ[v] = Observe(s.cond), (nxt,)
            elif isinstance(s, SkipStmt):
                labels[v], succ[v] = Skip(), (nxt,)
            elif isinstance(s, ReturnStmt):
                labels[v], succ[v] = Return(s.var), ()
            elif isinstance(s, IfStmt):
                labels[v] = Branch(s.cond)
                succ[v] = (ids[here + (0, 0)], ids[here + (1, 0)] if s.orelse else nxt)
                wire(s.then, here + (0,), nxt)
                wire(s.orelse, here + (1,), nxt)
            elif isinstance(s, WhileStmt):
                labels[v] = Branch(s.cond)
                succ[v] = (ids[here + (0, 0)], nxt)
                loop_lines[v] = s.line
                wire(s.body, here + (0,), v)

    wire(program.statements, (), None)
    end = ids[(len(program.statements) - 1,)]
    return make_pcfg(labels, succ, start=1, end=end, origin=program, loop_lines=loop_lines)


def compile_source(src: str) -> PCFG:
    return to_pcfg(parse(src))


# --- pretty printing ---------------------------------------------------------------------

def pretty(g: PCFG, q: Optional[Iterable[int]] = None) -> str:
    """Re-emit the source of a translated program.

    With ``q`` given, statements outside it print as ``skip``; a compound
    statement collapses to ``skip`` when nothing inside it is kept.
    """
    if not isinstance(g.origin, Program):
        raise Unstructured("graph carries no source structure")
    ids = number(g.origin)
    keep = None if q is None else set(q)
    lines: list[str] = []

    def kept(s: Stmt, path) -> bool:
        if keep is None or isinstance(s, ReturnStmt):
            return True
        return ids[path] in keep or any(
            kept(c, path + (b, j))
            for b, block in enumerate(_children(s)) for j, c in enumerate(block))

    def emit(stmts, prefix, depth):
        pad = "    " * depth
        for i, s in enumerate(stmts):
            path = prefix + (i,)
            if not kept(s, path):
                lines.append(pad + "skip")
            elif isinstance(s, AssignStmt):
                lines.append(f"{pad}{s.var} := {ex.show(s.expr)}")
            elif isinstance(s, RandomStmt):
                lines.append(f"{pad}{s.var} ~ {s.dist.show()}")
            elif isinstance(s, ObserveStmt):
                lines.append(f"{pad}observe({ex.show(s.cond)})")
            elif isinstance(s, SkipStmt):
                lines.append(pad + "skip")
            elif isinstance(s, ReturnStmt):
                lines.append(f"{pad}return {s.var}")
            elif isinstance(s, IfStmt):
                lines.append(f"{pad}if {ex.show(s.cond)} {{")
                emit(s.then, path + (0,), depth + 1)
                if s.orelse:
                    lines.append(pad + "} else {")
                    emit(s.orelse, path + (1,), depth + 1)
                lines.append(pad + "}")
            elif isinstance(s, WhileStmt):
                lines.append(f"{pad}while {ex.show(s.cond)} {{")
                emit(s.body, path + (0,), depth + 1)
                lines.append(pad + "}")

    emit(g.origin.statements, (), 0)
    return "\n".join(lines) + "\n"
