"""Generators and brute-force oracles shared by the test modules.

The oracles deliberately take different routes from the library: path
enumeration, reaching definitions, node removal, operational execution.
"""

from __future__ import annotations

import random
from fractions import Fraction
from itertools import combinations
from pathlib import Path

import networkx as nx

from pslice import expr as ex
from pslice.lang import compile_source
from pslice.pcfg import (PCFG, Assign, Branch, DistExpr, Observe, PCFGError, RandomAssign,
                         Return, Skip, make_pcfg)
from pslice.semantics import Distribution

FIXTURES = Path(__file__).parent / "fixtures"
FIXTURE_NAMES = ["p1", "p2", "p3", "p4_one", "p4_inc", "p4_rand"]


def fixture_source(name: str) -> str:
    return (FIXTURES / f"{name}.pwhile").read_text()


def fixture(name: str) -> PCFG:
    return compile_source(fixture_source(name))


def digraph(g: PCFG) -> nx.DiGraph:
    h = nx.DiGraph()
    h.add_nodes_from(g.nodes)
    h.add_edges_from((a, b) for a, b, _ in g.edges())
    return h


def subsets(items):
    items = sorted(items)
    for r in range(len(items) + 1):
        for combo in combinations(items, r):
            yield frozenset(combo)


# --- random graphs -------------------------------------------------------------------

def _rand_arith(rng: random.Random, names):
    names = sorted(names)
    a = ex.Var(rng.choice(names)) if names and rng.random() < 0.8 else ex.Const(rng.randint(0, 3))
    roll = rng.random()
    if roll < 0.3:
        return a
    b = ex.Var(rng.choice(names)) if names and rng.random() < 0.5 else ex.Const(rng.randint(1, 3))
    op = rng.choice(["+", "*", "-"])
    if op == "-":  # a + 4 - b keeps values in 0..3 under truncating %
        return ex.BinOp("%", ex.BinOp("-", ex.BinOp("+", a, ex.Const(4)), b), ex.Const(4))
    return ex.BinOp("%", ex.BinOp(op, a, b), ex.Const(4))


def _rand_cond(rng: random.Random, names):
    names = sorted(names)
    left = ex.Var(rng.choice(names)) if names else ex.Const(rng.randint(0, 3))
    return ex.Cmp(rng.choice(["<", "<=", ">=", "==", "!="]), left, ex.Const(rng.randint(0, 3)))


def _rand_dist(rng: random.Random) -> DistExpr:
    if rng.random() < 0.5:
        return DistExpr.uniform(0, rng.randint(1, 3))
    return DistExpr.of({0: Fraction(1, 2), rng.randint(1, 3): Fraction(1, 2)})


def random_graph(rng: random.Random, max_nodes: int = 7, variables=("x", "y"),
                 branch_rate: float = 0.35, min_nodes: int = 2) -> PCFG:
    """A valid, possibly unstructured pCFG on nodes 1..n (n <= max_nodes).

    Nodes sit on a spine 1 -> 2 -> ... -> n; branches and occasional jumps
    add arbitrary extra edges.  The first nodes usually define the
    variables so that most candidates pass the def-before-use check.
    """
    while True:
        n = rng.randint(min_nodes, max_nodes)
        succ, labels = {}, {}
        for v in range(1, n):
            spine = v + 1
            if v > 1 and n > 2 and rng.random() < branch_rate:
                other = rng.choice([u for u in range(1, n + 1) if u != spine])
                succ[v] = (spine, other) if rng.random() < 0.5 else (other, spine)
                labels[v] = Branch(_rand_cond(rng, variables))
                continue
            jump = rng.random() < 0.15 and v > 2
            succ[v] = (rng.choice([u for u in range(1, n + 1) if u != v]) if jump else spine,)
            roll = rng.random()
            if v <= len(variables) and rng.random() < 0.8:
                labels[v] = RandomAssign(variables[v - 1], _rand_dist(rng))
            elif roll < 0.3:
                labels[v] = RandomAssign(rng.choice(variables), _rand_dist(rng))
            elif roll < 0.6:
                labels[v] = Assign(rng.choice(variables), _rand_arith(rng, variables))
            elif roll < 0.85:
                labels[v] = Observe(_rand_cond(rng, variables))
            else:
                labels[v] = Skip()
        succ[n] = ()
        labels[n] = Return(rng.choice(variables)) if rng.random() < 0.8 else Skip()
        try:
            return make_pcfg(labels, succ, 1, n)
        except PCFGError:
            continue


# --- random structured programs ------------------------------------------------------

class _ProgramGen:
    """Structured programs with bounded loops ``c := 0; while c < K { ... c := c + 1 }``."""

    def __init__(self, rng: random.Random, max_nodes: int, loops: bool):
        self.rng = rng
        self.budget = max_nodes - 1  # the return statement
        self.loops = loops
        self.counter_used = False
        self.observe_in_loop = False

    def block(self, defined: set, depth: int, in_loop: bool, assignable, want: int):
        lines = []
        for _ in range(want):
            if self.budget <= 0:
                break
            lines.append(self.statement(defined, depth, in_loop, assignable))
        return lines

    def statement(self, defined, depth, in_loop, assignable):
        rng = self.rng
        pad = "    " * depth
        kinds = ["rand", "assign", "observe"]
        if self.budget >= 2 and depth < 2 and defined:
            kinds.append("if")
        if (self.loops and not in_loop and not self.counter_used and self.budget >= 4
                and depth < 2):
            kinds.append("while")
        kind = rng.choice(kinds) if defined else "rand"
        if kind == "assign" and not defined:
            kind = "rand"
        if kind == "observe" and not defined:
            kind = "rand"
        if kind == "rand":
            self.budget -= 1
            x = rng.choice(assignable)
            defined.add(x)
            return f"{pad}{x} ~ {_rand_dist(rng).show()}"
        if kind == "assign":
            self.budget -= 1
            x = rng.choice(assignable)
            e = ex.show(_rand_arith(rng, defined - {"c"} or defined))
            defined.add(x)
            return f"{pad}{x} := {e}"
        if kind == "observe":
            self.budget -= 1
            if in_loop:
                self.observe_in_loop = True
            return f"{pad}observe({ex.show(_rand_cond(rng, defined))})"
        if kind == "if":
            self.budget -= 1
            cond = ex.show(_rand_cond(rng, defined))
            then_defs, else_defs = set(defined), set(defined)
            then = self.block(then_defs, depth + 1, in_loop, assignable, rng.randint(1, 2))
            if not then:
                then = [pad + "    skip"]
                self.budget -= 1
            out = f"{pad}if {cond} {{\n" + "\n".join(then) + f"\n{pad}}}"
            if self.budget >= 1 and rng.random() < 0.5:
                orelse = self.block(else_defs, depth + 1, in_loop, assignable, rng.randint(1, 2))
                out += " else {\n" + "\n".join(orelse) + f"\n{pad}}}"
                defined.update(then_defs & else_defs)
            return out
        # bounded loop
        self.counter_used = True
        self.budget -= 3  # c := 0, the loop test, c := c + 1
        defined.add("c")
        k = rng.randint(1, 3)
        inner = [x for x in assignable if x != "c"]
        body_defs = set(defined)
        body = self.block(body_defs, depth + 1, True, inner, rng.randint(1, 2))
        if not body:
            body = [pad + "    skip"]
            self.budget -= 1
        return (f"{pad}c := 0\n{pad}while c < {k} {{\n" + "\n".join(body)
                + f"\n{pad}    c := c + 1\n{pad}}}")


def random_program(rng: random.Random, max_nodes: int = 8, loops: bool = True):
    """Source text of a structured program plus whether a loop body observes."""
    while True:
        names = ["x", "y", "c"] if loops and rng.random() < 0.6 else ["x", "y", "z"]
        gen = _ProgramGen(rng, max_nodes, "c" in names)
        assignable = [x for x in names if x != "c"]
        defined: set = set()
        lines = gen.block(defined, 0, False, assignable, rng.randint(2, 6))
        result = sorted(defined - {"c"}) or sorted(defined)
        if not result:
            continue
        lines.append(f"return {rng.choice(result)}")
        src = "\n".join(lines) + "\n"
        try:
            g = compile_source(src)
        except (PCFGError, ex.ParseError):
            continue
        if len(g.nodes) <= max_nodes:
            return src, gen.observe_in_loop


def acyclic_program(rng: random.Random, n_nodes: int) -> str:
    """A large loop-free structured program with about ``n_nodes`` nodes."""
    names = ["a", "b", "c", "d", "e"]
    lines = [f"{x} ~ uniform(0..3)" for x in names]
    count = len(names)

    def simple(pad):
        roll = rng.random()
        x = rng.choice(names)
        if roll < 0.4:
            return f"{pad}{x} := {ex.show(_rand_arith(rng, names))}"
        if roll < 0.6:
            return f"{pad}{x} ~ uniform(0..3)"
        if roll < 0.75:
            return f"{pad}observe({x} <= 3)"
        return f"{pad}skip"

    while count < n_nodes - 1:
        if rng.random() < 0.2 and count + 4 < n_nodes:
            lines.append(f"if {ex.show(_rand_cond(rng, names))} {{")
            lines += [simple("    "), simple("    ")]
            lines.append("} else {")
            lines.append(simple("    "))
            lines.append("}")
            count += 4
        else:
            lines.append(simple(""))
            count += 1
    lines.append("return a")
    return "\n".join(lines) + "\n"


# --- structural oracles -----------------------------------------------------------------

def pd_oracle(g: PCFG) -> dict[int, frozenset]:
    """u postdominates v iff v cannot reach End once u is removed."""
    h = digraph(g)
    out = {}
    for v in g.nodes:
        doms = {v}
        for u in g.nodes:
            if u == v:
                continue
            if u == g.end:
                doms.add(u)
                continue
            k = h.copy()
            k.remove_node(u)
            if not nx.has_path(k, v, g.end):
                doms.add(u)
        out[v] = frozenset(doms)
    return out


def lap_oracle(g: PCFG, v: int, v2: int) -> int:
    if v == v2:
        return 0
    return max(len(p) - 1 for p in nx.all_simple_paths(digraph(g), v, v2))


def dd_oracle(g: PCFG) -> frozenset:
    """Reaching definitions, iterated to a fixpoint."""
    rd_in = {v: set() for v in g.nodes}
    changed = True
    while changed:
        changed = False
        for v in g.nodes:
            new = set()
            for p in g.pred[v]:
                out_p = {(d, x) for d, x in rd_in[p] if x not in g.defs(p)}
                out_p |= {(p, x) for x in g.defs(p)}
                new |= out_p
            if new != rd_in[v]:
                rd_in[v] = new
                changed = True
    return frozenset((d, v) for v in g.nodes for d, x in rd_in[v] if x in g.uses(v))


def closure_oracle(g: PCFG, dd) -> frozenset:
    """Reflexive-transitive closure by repeated relational squaring."""
    rel = set(dd) | {(v, v) for v in g.nodes}
    while True:
        new = rel | {(a, d) for a, b in rel for c, d in rel if b == c}
        if new == rel:
            return frozenset(rel)
        rel = new


def rv_oracle(g: PCFG, q, v) -> frozenset:
    h = digraph(g)
    out = set()
    for v2 in q:
        paths = [[v]] if v == v2 else list(nx.all_simple_paths(h, v, v2))
        for path in paths:
            for x in g.uses(v2):
                if all(x not in g.defs(u) for u in path[:-1]):
                    out.add(x)
    return frozenset(out)


def next_visible_oracle(g: PCFG, q, v):
    """The node of Q u {End} lying on every path from v to Q u {End}."""
    visible = set(q) | {g.end}
    h = digraph(g)
    found = []
    for cand in visible:
        if cand == v:
            found.append(cand)
            continue
        k = h.copy()
        k.remove_node(cand)
        if v in k and not any(nx.has_path(k, v, w) for w in visible - {cand}):
            found.append(cand)
    assert len(found) <= 1
    return found[0] if found else None


def pnv_oracle(g: PCFG, q) -> bool:
    return all(next_visible_oracle(g, q, v) is not None for v in g.nodes)


def weak_slice_oracle(g: PCFG, q, dd) -> bool:
    q = set(q)
    return all(a in q for a, b in dd if b in q) and pnv_oracle(g, q)


def stays_outside_oracle(g: PCFG, q, v, v2) -> bool:
    if v == v2:
        return True
    h = digraph(g)
    h.remove_node(v2)
    reach = nx.descendants(h, v) | {v}
    return not (reach & (set(q) - {v2}))


# --- semantics oracle -----------------------------------------------------------------

def operational(g: PCFG, d0: Distribution, x=None, fppd=None, max_steps=100000) -> Distribution:
    """Run every execution path, merging equal (node, store) states per step.

    Nodes outside X are skipped; a branch outside X jumps straight to its
    first proper postdominator (given by ``fppd``).  Only valid for
    programs whose executions all terminate.
    """
    x = set(g.nodes) if x is None else set(x)
    names = d0.variables
    out: dict = {}
    layer = {(g.start, s): p for s, p in d0.mass.items()}
    for _ in range(max_steps):
        if not layer:
            return Distribution(names, out)
        nxt: dict = {}

        def put(v, s, p):
            if v == g.end:
                out[s] = out.get(s, 0) + p
            else:
                nxt[v, s] = nxt.get((v, s), 0) + p

        for (v, s), p in layer.items():
            lab = g.labels[v]
            env = dict(zip(names, s))
            if v not in x:
                put(fppd[v] if isinstance(lab, Branch) else g.succ[v][0], s, p)
            elif isinstance(lab, Assign):
                i = names.index(lab.var)
                put(g.succ[v][0], s[:i] + (ex.evaluate(lab.expr, env),) + s[i + 1:], p)
            elif isinstance(lab, RandomAssign):
                i = names.index(lab.var)
                for val, q in lab.dist:
                    put(g.succ[v][0], s[:i] + (val,) + s[i + 1:], p * q)
            elif isinstance(lab, Observe):
                if ex.evaluate(lab.cond, env):
                    put(g.succ[v][0], s, p)
            elif isinstance(lab, Branch):
                put(g.succ[v][0 if ex.evaluate(lab.cond, env) else 1], s, p)
            else:
                put(g.succ[v][0], s, p)
        layer = nxt
    raise RuntimeError("program did not terminate within the step bound")


def random_distribution(rng: random.Random, names, max_support: int = 6,
                        values=range(4), total: Fraction = Fraction(1)) -> Distribution:
    k = rng.randint(0, max_support)
    weights = [rng.randint(1, 9) for _ in range(k)]
    mass: dict = {}
    for w in weights:
        s = tuple(rng.choice(list(values)) for _ in names)
        mass[s] = mass.get(s, 0) + total * Fraction(w, sum(weights))
    return Distribution(names, mass)
