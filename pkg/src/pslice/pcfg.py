"""Probabilistic control-flow graphs and their structural analyses.

A :class:`PCFG` is built through :func:`validate` (from the JSON
interchange shape) or :func:`make_pcfg` (from Python values); both
check every structural invariant and raise :class:`PCFGError` listing
all violations.  Node ids are the integers the caller supplies; the
language frontend numbers statements from 1 in source order.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from fractions import Fraction
from typing import Any, Iterable, Mapping, Optional, Union

import networkx as nx

from . import expr as ex


# --- labels ----------------------------------------------------------------

@dataclass(frozen=True)
class DistExpr:
    """A finite distribution over integers with exact rational weights."""

    support: tuple[tuple[int, Fraction], ...]

    @classmethod
    def of(cls, weights: Mapping[int, Any]) -> "DistExpr":
        items = []
        for value, p in weights.items():
            p = Fraction(p)
            if p < 0:
                raise ValueError(f"negative probability {p} for value {value}")
            if p:
                items.append((int(value), p))
        if not items:
            raise ValueError("distribution has empty support")
        total = sum(p for _, p in items)
        if total != 1:
            raise ValueError(f"probabilities sum to {total}, not 1")
        return cls(tuple(sorted(items)))

    @classmethod
    def uniform(cls, lo: int, hi: int) -> "DistExpr":
        if hi < lo:
            raise ValueError(f"empty range {lo}..{hi}")
        p = Fraction(1, hi - lo + 1)
        return cls(tuple((v, p) for v in range(lo, hi + 1)))

    def as_range(self) -> Optional[tuple[int, int]]:
        """(lo, hi) if this is uniform over a contiguous range, else None."""
        values = [v for v, _ in self.support]
        lo, hi = values[0], values[-1]
        if values == list(range(lo, hi + 1)) and all(
            p == Fraction(1, len(values)) for _, p in self.support
        ):
            return lo, hi
        return None

    def __iter__(self):
        return iter(self.support)

    def to_json(self) -> dict[str, str]:
        return {str(v): str(p) for v, p in self.support}

    def show(self) -> str:
        rng = self.as_range()
        if rng is not None:
            return f"uniform({rng[0]}..{rng[1]})"
        return "{" + ", ".join(f"{v}: {p}" for v, p in self.support) + "}"


@dataclass(frozen=True)
class Assign:
    var: str
    expr: ex.ArithExpr


@dataclass(frozen=True)
class RandomAssign:
    var: str
    dist: DistExpr


@dataclass(frozen=True)
class Observe:
    cond: ex.BoolExpr


@dataclass(frozen=True)
class Branch:
    cond: ex.BoolExpr


@dataclass(frozen=True)
class Skip:
    pass


@dataclass(frozen=True)
class Return:
    var: str


@dataclass(frozen=True)
class Start:
    pass


Label = Union[Assign, RandomAssign, Observe, Branch, Skip, Return, Start]


def defs(label: Label) -> frozenset[str]:
    if isinstance(label, (Assign, RandomAssign)):
        return frozenset((label.var,))
    return frozenset()


def uses(label: Label) -> frozenset[str]:
    if isinstance(label, Assign):
        return ex.free_vars(label.expr)
    if isinstance(label, (Observe, Branch)):
        return ex.free_vars(label.cond)
    if isinstance(label, Return):
        return frozenset((label.var,))
    return frozenset()


def show_label(label: Label) -> str:
    if isinstance(label, Assign):
        return f"{label.var} := {ex.show(label.expr)}"
    if isinstance(label, RandomAssign):
        return f"{label.var} ~ {label.dist.show()}"
    if isinstance(label, Observe):
        return f"observe({ex.show(label.cond)})"
    if isinstance(label, Branch):
        return ex.show(label.cond)
    if isinstance(label, Return):
        return f"return {label.var}"
    if isinstance(label, Start):
        return "start"
    return "skip"


# --- errors ------------------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    kind: str  # MultipleEnds, EndHasSuccessor, UnreachableNode, NoPathToEnd, ...
    node: Optional[int] = None
    detail: str = ""

    def __str__(self):
        where = f" at node {self.node}" if self.node is not None else ""
        return f"{self.kind}{where}" + (f": {self.detail}" if self.detail else "")


class PCFGError(ValueError):
    def __init__(self, violations: list[Violation]):
        self.violations = violations
        super().__init__("invalid pCFG: " + "; ".join(map(str, violations)))


class NotPostdominator(ValueError):
    pass


class EndHasNoFppd(ValueError):
    pass


# --- the graph -----------------------------------------------------------------

@dataclass(frozen=True, eq=False)
class PCFG:
    """A validated pCFG.

    ``succ[v]`` is ``(true_succ, false_succ)`` for branch nodes and a
    1-tuple otherwise (empty for End).  ``inert`` lists branch nodes
    whose label is kept for display but which the semantics treats as
    sliced away (set by :func:`pslice.slicer.residual`).  ``origin`` is
    the structured program the graph was translated from, if any.
    """

    labels: Mapping[int, Label]
    succ: Mapping[int, tuple[int, ...]]
    start: int
    end: int
    inert: frozenset[int] = frozenset()
    origin: Any = None
    loop_lines: Mapping[int, int] = field(default_factory=dict)
    nodes: tuple[int, ...] = field(init=False)
    pred: Mapping[int, tuple[int, ...]] = field(init=False)
    variables: tuple[str, ...] = field(init=False)

    def __post_init__(self):
        nodes = tuple(sorted(self.labels))
        pred: dict[int, list[int]] = {v: [] for v in nodes}
        for v in nodes:
            for s in dict.fromkeys(self.succ[v]):
                pred[s].append(v)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "pred", {v: tuple(ps) for v, ps in pred.items()})
        names: set[str] = set()
        for lab in self.labels.values():
            names |= defs(lab) | uses(lab)
        object.__setattr__(self, "variables", tuple(sorted(names)))

    def __len__(self):
        return len(self.nodes)

    def label(self, v: int) -> Label:
        return self.labels[v]

    def is_branch(self, v: int) -> bool:
        return isinstance(self.labels[v], Branch)

    def defs(self, v: int) -> frozenset[str]:
        return defs(self.labels[v])

    def uses(self, v: int) -> frozenset[str]:
        return uses(self.labels[v])

    def successors(self, v: int) -> tuple[int, ...]:
        """Distinct successors in (true, false) order."""
        return tuple(dict.fromkeys(self.succ[v]))

    @property
    def observe_nodes(self) -> frozenset[int]:
        return frozenset(v for v in self.nodes if isinstance(self.labels[v], Observe))

    def edges(self) -> Iterable[tuple[int, int, Optional[str]]]:
        for v in self.nodes:
            ss = self.succ[v]
            if self.is_branch(v):
                yield v, ss[0], "true"
                yield v, ss[1], "false"
            else:
                for s in ss:
                    yield v, s, None

    def relabel(self, labels: Mapping[int, Label], inert: Iterable[int] = ()) -> "PCFG":
        return PCFG(dict(labels), self.succ, self.start, self.end,
                    frozenset(inert), self.origin, self.loop_lines)


# --- construction and validation --------------------------------------------------

def make_pcfg(labels: Mapping[int, Label], succ: Mapping[int, Iterable[int]],
              start: int, end: int, **extra) -> PCFG:
    """Build a PCFG from labels and successor lists, checking every invariant."""
    succ = {v: tuple(succ.get(v, ())) for v in labels}
    problems = _structural_violations(labels, succ, start, end)
    if problems:
        raise PCFGError(problems)
    g = PCFG(dict(labels), succ, start, end, **extra)
    problems = _reachability_violations(g)
    if not problems:
        problems = _def_use_violations(g)
    if problems:
        raise PCFGError(problems)
    return g


def _structural_violations(labels, succ, start, end) -> list[Violation]:
    out: list[Violation] = []
    for which, v in (("start", start), ("end", end)):
        if v not in labels:
            out.append(Violation("UnknownNode", v, f"{which} node does not exist"))
    for v, ss in succ.items():
        for s in ss:
            if s not in labels:
                out.append(Violation("UnknownNode", v, f"edge to missing node {s}"))
    if out:
        return out
    sinks = [v for v in sorted(labels) if not succ[v]]
    if any(v != end for v in sinks):
        out.append(Violation("MultipleEnds", None, f"nodes without successors: {sinks}"))
    if succ[end]:
        out.append(Violation("EndHasSuccessor", end))
    for v in sorted(labels):
        lab = labels[v]
        if v != end and succ[v]:
            want = 2 if isinstance(lab, Branch) else 1
            if len(succ[v]) != want:
                out.append(Violation("BadArity", v,
                                     f"{len(succ[v])} successors, expected {want}"))
        if isinstance(lab, Return) and v != end:
            out.append(Violation("BadLabel", v, "return is only allowed on End"))
        if v == end and isinstance(lab, (Observe, Branch, Assign, RandomAssign)):
            out.append(Violation("BadLabel", v, "End must be return or skip"))
        if isinstance(lab, Start) and v != start:
            out.append(Violation("BadLabel", v, "start label on a non-start node"))
    return out


def _reachable(start: int, step: Mapping[int, Iterable[int]]) -> set[int]:
    seen = {start}
    stack = [start]
    while stack:
        v = stack.pop()
        for s in step[v]:
            if s not in seen:
                seen.add(s)
                stack.append(s)
    return seen


def _reachability_violations(g: PCFG) -> list[Violation]:
    out = []
    fwd = _reachable(g.start, g.succ)
    out += [Violation("UnreachableNode", v) for v in g.nodes if v not in fwd]
    back = _reachable(g.end, g.pred)
    out += [Violation("NoPathToEnd", v) for v in g.nodes if v not in back]
    return out


def _def_use_violations(g: PCFG) -> list[Violation]:
    # must-defined on entry; exact for "some earlier node on every path defines x"
    universe = frozenset(g.variables)
    defined = {v: universe for v in g.nodes}
    defined[g.start] = frozenset()
    order = _reverse_postorder(g.start, g.succ)
    changed = True
    while changed:
        changed = False
        for v in order:
            if v == g.start:
                continue
            new = universe
            for p in g.pred[v]:
                new = new & (defined[p] | g.defs(p))
            if new != defined[v]:
                defined[v] = new
                changed = True
    return [Violation("UseBeforeDef", v, x)
            for v in g.nodes for x in sorted(g.uses(v) - defined[v])]


def _reverse_postorder(root: int, step: Mapping[int, Iterable[int]]) -> list[int]:
    seen = {root}
    post: list[int] = []
    stack = [(root, iter(step[root]))]
    while stack:
        v, it = stack[-1]
        for s in it:
            if s not in seen:
                seen.add(s)
                stack.append((s, iter(step[s])))
                break
        else:
            stack.pop()
            post.append(v)
    return post[::-1]


def _parse_label(raw: Any) -> Label:
    if not isinstance(raw, Mapping):
        return raw  # already a Label
    kind = raw.get("kind")
    if kind == "assign":
        return Assign(raw["var"], ex.parse_arith(raw["expr"]))
    if kind == "rassign":
        dist = raw["dist"]
        if isinstance(dist, Mapping) and "uniform" in dist:
            lo, hi = dist["uniform"]
            return RandomAssign(raw["var"], DistExpr.uniform(int(lo), int(hi)))
        return RandomAssign(raw["var"], DistExpr.of({int(k): v for k, v in dist.items()}))
    if kind == "observe":
        return Observe(ex.parse_bool(raw["cond"]))
    if kind == "branch":
        return Branch(ex.parse_bool(raw["cond"]))
    if kind == "return":
        return Return(raw["var"])
    if kind == "skip":
        return Skip()
    if kind == "start":
        return Start()
    raise ValueError(f"unknown label kind {kind!r}")


def validate(raw: Mapping[str, Any]) -> PCFG:
    """Build a PCFG from the JSON interchange shape.

    ``{"nodes": [{"id": 1, "label": {...}}, ...],
       "edges": [{"from": 1, "to": 2}, {"from": 3, "to": 4, "branch": "true"}],
       "start": 1, "end": 5}``
    """
    problems: list[Violation] = []
    labels: dict[int, Label] = {}
    for node in raw["nodes"]:
        v = int(node["id"])
        if v in labels:
            problems.append(Violation("DuplicateNode", v))
            continue
        try:
            labels[v] = _parse_label(node.get("label", {"kind": "skip"}))
        except (ValueError, KeyError) as err:
            problems.append(Violation("BadLabel", v, str(err)))
    outs: dict[int, dict[Optional[str], list[int]]] = {v: {} for v in labels}
    for e in raw.get("edges", []):
        src, dst = int(e["from"]), int(e["to"])
        if src not in outs:
            problems.append(Violation("UnknownNode", src, "edge from missing node"))
            continue
        outs[src].setdefault(e.get("branch"), []).append(dst)
    if problems:
        raise PCFGError(problems)
    succ: dict[int, tuple[int, ...]] = {}
    for v, by_kind in outs.items():
        if isinstance(labels[v], Branch):
            t, f = by_kind.get("true", []), by_kind.get("false", [])
            if len(t) == 1 and len(f) == 1 and None not in by_kind:
                succ[v] = (t[0], f[0])
            else:
                succ[v] = tuple(t + f + by_kind.get(None, []))
                if succ[v]:
                    problems.append(Violation("BadArity", v,
                                              "branch needs one true and one false edge"))
        else:
            succ[v] = tuple(d for ds in by_kind.values() for d in ds)
    if problems:
        raise PCFGError(problems)
    return make_pcfg(labels, succ, int(raw["start"]), int(raw["end"]),
                     inert=frozenset(raw.get("inert", ())))


def _label_json(label: Label) -> dict[str, Any]:
    if isinstance(label, Assign):
        return {"kind": "assign", "var": label.var, "expr": ex.show(label.expr)}
    if isinstance(label, RandomAssign):
        return {"kind": "rassign", "var": label.var, "dist": label.dist.to_json()}
    if isinstance(label, Observe):
        return {"kind": "observe", "cond": ex.show(label.cond)}
    if isinstance(label, Branch):
        return {"kind": "branch", "cond": ex.show(label.cond)}
    if isinstance(label, Return):
        return {"kind": "return", "var": label.var}
    if isinstance(label, Start):
        return {"kind": "start"}
    return {"kind": "skip"}


def to_json(g: PCFG) -> dict[str, Any]:
    out: dict[str, Any] = {
        "nodes": [{"id": v, "label": _label_json(g.labels[v])} for v in g.nodes],
        "edges": [
            {"from": a, "to": b, **({"branch": k} if k else {})} for a, b, k in g.edges()
        ],
        "start": g.start,
        "end": g.end,
    }
    if g.inert:
        out["inert"] = sorted(g.inert)
    return out


def to_dot(g: PCFG, q: Iterable[int] = (), q0: Iterable[int] = (),
           highlight: bool = False) -> str:
    """Graphviz rendering; with ``highlight`` Q is solid, Q0 dashed, the rest gray."""
    q, q0 = set(q), set(q0)
    lines = ["digraph pcfg {", "  node [fontname=monospace];"]
    for v in g.nodes:
        lab = g.labels[v]
        shape = "doublecircle" if v == g.end else "diamond" if isinstance(lab, Branch) else "box"
        text = f"{v}: {show_label(lab)}".replace("\\", "\\\\").replace('"', '\\"')
        attrs = [f'label="{text}"', f"shape={shape}"]
        if highlight:
            if v in q:
                attrs.append("style=solid")
            elif v in q0:
                attrs.append("style=dashed")
            else:
                attrs += ["style=solid", "color=gray", "fontcolor=gray"]
        lines.append(f"  n{v} [{', '.join(attrs)}];")
    for a, b, kind in g.edges():
        tag = {"true": ' [label="T"]', "false": ' [label="F"]'}.get(kind, "")
        lines.append(f"  n{a} -> n{b}{tag};")
    lines.append("}")
    return "\n".join(lines) + "\n"


# --- postdominators ---------------------------------------------------------------

def postdominators(g: PCFG) -> dict[int, frozenset[int]]:
    """Map each node v to the set of nodes postdominating it (including v)."""
    index = {v: i for i, v in enumerate(g.nodes)}
    full = (1 << len(g.nodes)) - 1
    pd = {v: full for v in g.nodes}
    pd[g.end] = 1 << index[g.end]
    order = [v for v in _reverse_postorder(g.end, g.pred) if v != g.end]
    changed = True
    while changed:
        changed = False
        for v in order:
            acc = full
            for s in g.succ[v]:
                acc &= pd[s]
            acc |= 1 << index[v]
            if acc != pd[v]:
                pd[v] = acc
                changed = True
    return {v: frozenset(u for u in g.nodes if pd[v] >> index[u] & 1) for v in g.nodes}


def fppd(g: PCFG, pd: Mapping[int, frozenset[int]], v: int) -> int:
    """First proper postdominator: the proper postdominator nearest to v."""
    if v == g.end:
        raise EndHasNoFppd(f"node {v} is End")
    proper = pd[v] - {v}
    # the nearest one is postdominated by every other proper postdominator
    return max(proper, key=lambda u: len(pd[u]))


# --- longest acyclic paths --------------------------------------------------------

def _is_acyclic(g: PCFG) -> bool:
    try:
        _topological(g)
        return True
    except ValueError:
        return False


def _topological(g: PCFG) -> list[int]:
    indeg = {v: 0 for v in g.nodes}
    for v in g.nodes:
        for s in g.successors(v):
            indeg[s] += 1
    ready = [v for v in g.nodes if indeg[v] == 0]
    order = []
    while ready:
        v = ready.pop()
        order.append(v)
        for s in g.successors(v):
            indeg[s] -= 1
            if indeg[s] == 0:
                ready.append(s)
    if len(order) != len(g.nodes):
        raise ValueError("graph has a cycle")
    return order


def laps_to(g: PCFG, pd: Mapping[int, frozenset[int]], target: int,
            topo: Optional[list[int]] = None) -> dict[int, int]:
    """LAP(v, target) for every v postdominated by ``target``.

    Exhaustive over acyclic paths, but memoized per strongly connected
    component: once a path leaves a component it cannot come back, so only
    the visited nodes of the current component matter.  Worst case is
    exponential in the size of the largest loop body.
    """
    region = {v for v in g.nodes if target in pd[v]}
    best: dict[int, int] = {target: 0}
    if topo is not None:
        for v in reversed(topo):
            if v in region and v != target:
                best[v] = 1 + max(best[s] for s in g.successors(v))
        return best

    h = nx.DiGraph()
    h.add_nodes_from(region)
    h.add_edges_from((v, s) for v in region if v != target for s in g.successors(v))
    cond = nx.condensation(h)
    for c in reversed(list(nx.topological_sort(cond))):
        members = cond.nodes[c]["members"]
        if len(members) == 1 and not any(h.has_edge(v, v) for v in members):
            (v,) = members
            if v != target:
                best[v] = 1 + max(best[s] for s in g.successors(v))
            continue
        bit = {v: 1 << i for i, v in enumerate(sorted(members))}
        memo: dict[tuple[int, int], float] = {}

        def longest(v: int, mask: int) -> float:
            key = (v, mask)
            if key not in memo:
                result = float("-inf")
                for s in g.successors(v):
                    if s in bit:
                        if not mask & bit[s]:
                            result = max(result, 1 + longest(s, mask | bit[s]))
                    else:
                        result = max(result, 1 + best[s])
                memo[key] = result
            return memo[key]

        for v in members:
            best[v] = int(longest(v, bit[v]))
    return best


def lap(g: PCFG, v: int, v2: int, pd: Optional[Mapping[int, frozenset[int]]] = None) -> int:
    pd = pd if pd is not None else postdominators(g)
    if v2 not in pd[v]:
        raise NotPostdominator(f"{v2} does not postdominate {v}")
    return laps_to(g, pd, v2)[v]


# --- tables ---------------------------------------------------------------------------

@dataclass(frozen=True)
class AnalysisTables:
    pd: Mapping[int, frozenset[int]]
    fppd: Mapping[int, int]
    lap: Mapping[tuple[int, int], int]
    cycle_inducing: frozenset[int]

    def lap_of(self, v: int, v2: int) -> int:
        try:
            return self.lap[v, v2]
        except KeyError:
            raise NotPostdominator(f"{v2} does not postdominate {v}") from None


def cycle_inducing(g: PCFG, pd: Mapping[int, frozenset[int]],
                   first: Mapping[int, int], laps: Mapping[tuple[int, int], int]) -> frozenset[int]:
    out = set()
    for v in g.nodes:
        if v == g.end:
            continue
        w = first[v]
        if any(laps[s, w] >= laps[v, w] for s in g.successors(v)):
            out.add(v)
    return frozenset(out)


def analyze(g: PCFG) -> AnalysisTables:
    pd = postdominators(g)
    first = {v: fppd(g, pd, v) for v in g.nodes if v != g.end}
    topo = _topological(g) if _is_acyclic(g) else None
    laps: dict[tuple[int, int], int] = {}
    for t in g.nodes:
        for v, n in laps_to(g, pd, t, topo).items():
            laps[v, t] = n
    return AnalysisTables(pd, first, laps, cycle_inducing(g, pd, first, laps))
