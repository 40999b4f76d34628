"""Data dependence, relevant variables, next visibles and related predicates."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .pcfg import PCFG, NotPostdominator, postdominators


def data_dep(g: PCFG) -> frozenset[tuple[int, int]]:
    """Direct data dependences (v1, v2).

    v1 defines some x used at v2 and a path of at least one edge leads
    from v1 to v2 without an interior node defining x.
    """
    out = set()
    for v1 in g.nodes:
        for x in g.defs(v1):
            seen: set[int] = set()
            stack = list(g.successors(v1))
            while stack:
                u = stack.pop()
                if u in seen:
                    continue
                seen.add(u)
                if x in g.uses(u):
                    out.add((v1, u))
                if x not in g.defs(u):
                    stack.extend(g.successors(u))
    return frozenset(out)


@dataclass(frozen=True)
class DDStar:
    """Reflexive-transitive closure of data dependence.

    ``ancestors[v]`` holds every u with u ->dd* v.
    """

    ancestors: Mapping[int, frozenset[int]]

    def __call__(self, v1: int, v2: int) -> bool:
        return v1 in self.ancestors[v2]

    def pairs(self) -> list[tuple[int, int]]:
        return sorted((u, v) for v, us in self.ancestors.items() for u in us)


def dd_star(g: PCFG, dd: Optional[Iterable[tuple[int, int]]] = None) -> DDStar:
    """Warshall's algorithm on integer bitsets, O(n^3 / wordsize)."""
    if dd is None:
        dd = data_dep(g)
    index = {v: i for i, v in enumerate(g.nodes)}
    anc = [1 << i for i in range(len(g.nodes))]
    for a, b in dd:
        anc[index[b]] |= 1 << index[a]
    for k in range(len(anc)):
        kbit, krow = 1 << k, anc[k]
        for i in range(len(anc)):
            if anc[i] & kbit:
                anc[i] |= krow
    return DDStar({v: frozenset(u for u in g.nodes if anc[index[v]] >> index[u] & 1)
                   for v in g.nodes})


def dd_close(dds: DDStar, q: Iterable[int], q1: Iterable[int]) -> frozenset[int]:
    """Least DD-closed superset of q and q1, given q is already DD-closed."""
    out = set(q)
    for v in q1:
        if v not in out:
            out |= dds.ancestors[v]
    return frozenset(out)


def is_dd_closed(g: PCFG, q: Iterable[int], dd: Optional[Iterable[tuple[int, int]]] = None) -> bool:
    q = set(q)
    if dd is None:
        dd = data_dep(g)
    return all(a in q for a, b in dd if b in q)


def relevant_vars(g: PCFG, q: Iterable[int], v: int) -> frozenset[str]:
    """rv(Q, v): variables that may reach a use in Q from v without redefinition."""
    q = set(q)
    out = set()
    for x in g.variables:
        # backward search from the uses of x in Q through non-definers of x
        seen = {u for u in q if x in g.uses(u)}
        stack = list(seen)
        while stack and v not in seen:
            u = stack.pop()
            for p in g.pred[u]:
                if p not in seen and x not in g.defs(p):
                    seen.add(p)
                    stack.append(p)
        if v in seen:
            out.add(x)
    return frozenset(out)


def first_hits(g: PCFG, visible: set[int], v: int) -> set[int]:
    """Nodes of ``visible`` that some path from v reaches first."""
    if v in visible:
        return {v}
    hits, seen, stack = set(), {v}, [v]
    while stack:
        u = stack.pop()
        for s in g.successors(u):
            if s in visible:
                hits.add(s)
            elif s not in seen:
                seen.add(s)
                stack.append(s)
    return hits


def next_visible(g: PCFG, q: Iterable[int], v: int) -> Optional[int]:
    """The next visible of v in Q, or None if there is none.

    Every path from v to Q u {End} passes through one of the first-hit
    nodes, so a next visible exists exactly when that set is a singleton.
    """
    hits = first_hits(g, set(q) | {g.end}, v)
    return next(iter(hits)) if len(hits) == 1 else None


def provides_next_visibles(g: PCFG, q: Iterable[int]) -> bool:
    visible = set(q) | {g.end}
    return all(len(first_hits(g, visible, v)) == 1 for v in g.nodes)


def is_weak_slice_set(g: PCFG, q: Iterable[int],
                      dd: Optional[Iterable[tuple[int, int]]] = None) -> bool:
    q = set(q)
    return is_dd_closed(g, q, dd) and provides_next_visibles(g, q)


def stays_outside(g: PCFG, q: Iterable[int], v: int, v2: int,
                  pd: Optional[Mapping[int, frozenset[int]]] = None) -> bool:
    """Does every path from v that stops at its first v2 avoid Q (except v2)?"""
    pd = pd if pd is not None else postdominators(g)
    if v2 not in pd[v]:
        raise NotPostdominator(f"{v2} does not postdominate {v}")
    q = set(q)
    if v == v2:
        return True
    seen, stack = {v}, [v]
    while stack:
        u = stack.pop()
        if u in q:
            return False
        for s in g.successors(u):
            if s != v2 and s not in seen:
                seen.add(s)
                stack.append(s)
    return True
