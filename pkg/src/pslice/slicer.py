"""Computing slices: PNV?, least weak slice sets, and the best slicing pair."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Mapping, Optional, Sequence

from .depend import DDStar, data_dep, dd_close, dd_star, first_hits, is_weak_slice_set
from .pcfg import PCFG, AnalysisTables, Branch, Skip, analyze

_BOTTOM = object()  # "no next visible seen yet"; never equal to a node id


class MissingObserve(ValueError):
    def __init__(self, v: int):
        self.node = v
        super().__init__(f"observe node {v} is not in ESS")


class NotCycleInducing(ValueError):
    def __init__(self, v: int):
        self.node = v
        super().__init__(f"node {v} is not cycle-inducing")


def pnv_check(g: PCFG, q: Iterable[int]) -> frozenset[int]:
    """Empty iff Q provides next visibles; otherwise nodes any such superset needs.

    Backward breadth-first search from Q u {End}, labelling each node with
    the next visible it was reached from; a node reached from two
    different labels is a conflict.
    """
    q = frozenset(q)
    frontier = sorted(q | {g.end})
    nv = {v: _BOTTOM for v in g.nodes}
    for v in frontier:
        nv[v] = v
    conflicts: set[int] = set()
    while frontier and not conflicts:
        nxt = []
        for v2 in frontier:
            for v in g.pred[v2]:
                if v in q:
                    continue
                if nv[v] is _BOTTOM:
                    nv[v] = nv[v2]
                    nxt.append(v)
                elif nv[v] != nv[v2]:
                    conflicts.add(v)
        frontier = nxt
    return frozenset(conflicts)


def lws(g: PCFG, dds: DDStar, qhat: Iterable[int]) -> frozenset[int]:
    """Least weak slice set containing qhat."""
    q = dd_close(dds, (), qhat)
    c = pnv_check(g, q)
    while c:
        q = dd_close(dds, q, c)
        c = pnv_check(g, q)
    return q


@dataclass(frozen=True)
class EssSet:
    """Nodes that must end up in Q or Q0, each tagged with why."""

    provenance: Mapping[int, str]  # observe-node | declared-by-config | default-conservative

    @property
    def nodes(self) -> frozenset[int]:
        return frozenset(self.provenance)

    def __iter__(self):
        return iter(sorted(self.provenance))

    def __contains__(self, v):
        return v in self.provenance

    def __len__(self):
        return len(self.provenance)


def build_ess(g: PCFG, t: Optional[AnalysisTables] = None,
              declared_sum_preserving: Iterable[int] = (),
              declared_essential: Iterable[int] = ()) -> EssSet:
    """Observe nodes plus every cycle-inducing node not declared sum-preserving."""
    t = t if t is not None else analyze(g)
    declared = set(declared_sum_preserving)
    for v in sorted(declared):
        if v not in t.cycle_inducing:
            raise NotCycleInducing(v)
    tags = {v: "default-conservative" for v in t.cycle_inducing - declared}
    tags.update({v: "declared-by-config" for v in declared_essential})
    tags.update({v: "observe-node" for v in g.observe_nodes})
    return EssSet(dict(sorted(tags.items())))


@dataclass(frozen=True)
class SlicingPair:
    q: frozenset[int]
    q0: frozenset[int]
    ess: frozenset[int] = frozenset()

    def to_json(self) -> dict:
        return {"Q": sorted(self.q), "Q0": sorted(self.q0), "ess": sorted(self.ess)}


def bsp(g: PCFG, dds: Optional[DDStar], ess: Iterable[int],
        check_invariants: bool = False, order: Optional[Sequence[int]] = None) -> SlicingPair:
    """The slicing pair wrt ESS whose Q is least among all such pairs.

    ESS nodes are visited in ascending id unless ``order`` says otherwise;
    the result does not depend on it.
    """
    dds = dds if dds is not None else dd_star(g)
    ess = frozenset(ess)
    missing = sorted(g.observe_nodes - ess)
    if missing:
        raise MissingObserve(missing[0])
    work = sorted(ess) if order is None else [v for v in order if v in ess]
    if set(work) != ess:
        raise ValueError("order must list every ESS node")
    qv = {v: lws(g, dds, {v}) for v in work + [g.end]}
    q: frozenset[int] = frozenset()
    f = qv[g.end]
    while f:
        if check_invariants:
            assert is_weak_slice_set(g, q) and is_weak_slice_set(g, f)
            assert g.end in q | f
            assert all(not (qv[v] & q) for v in work)
        q = q | f
        f = frozenset()
        for v in list(work):
            if qv[v] & q:
                work.remove(v)
                f = f | qv[v]
    q0 = frozenset().union(*(qv[v] for v in work))
    return SlicingPair(q, q0, ess)


@dataclass(frozen=True)
class ClauseCheck:
    clause: int
    ok: bool
    witnesses: tuple[str, ...] = ()


@dataclass(frozen=True)
class PairReport:
    clauses: tuple[ClauseCheck, ...] = field(default_factory=tuple)

    @property
    def ok(self) -> bool:
        return all(c.ok for c in self.clauses)

    def clause(self, n: int) -> ClauseCheck:
        return next(c for c in self.clauses if c.clause == n)


def _weak_slice_witnesses(g: PCFG, s: frozenset[int], name: str, dd) -> list[str]:
    out = [f"{a} ->dd {b} with {b} in {name} but {a} not" for a, b in sorted(dd)
           if b in s and a not in s]
    visible = s | {g.end}
    out += [f"node {v} has no next visible in {name}" for v in g.nodes
            if len(first_hits(g, visible, v)) != 1]
    return out


def validate_slicing_pair(g: PCFG, pair: SlicingPair,
                          dd: Optional[Iterable[tuple[int, int]]] = None) -> PairReport:
    """Check each clause of 'slicing pair wrt ESS' separately, with witnesses."""
    dd = frozenset(dd) if dd is not None else data_dep(g)
    q, q0 = frozenset(pair.q), frozenset(pair.q0)
    first = _weak_slice_witnesses(g, q, "Q", dd) + _weak_slice_witnesses(g, q0, "Q0", dd)
    if g.end not in q:
        first.append(f"End ({g.end}) is not in Q")
    overlap = sorted(q & q0)
    missing = sorted(pair.ess - (q | q0))
    return PairReport((
        ClauseCheck(1, not first, tuple(first)),
        ClauseCheck(2, not overlap, tuple(f"node {v} in both Q and Q0" for v in overlap)),
        ClauseCheck(3, not missing, tuple(f"ESS node {v} in neither Q nor Q0" for v in missing)),
    ))


def is_slicing_pair(g: PCFG, q: Iterable[int], q0: Iterable[int], ess: Iterable[int],
                    dd: Optional[Iterable[tuple[int, int]]] = None) -> bool:
    """Boolean form of :func:`validate_slicing_pair`, without witnesses."""
    q, q0, ess = frozenset(q), frozenset(q0), frozenset(ess)
    return (g.end in q and not q & q0 and ess <= q | q0
            and is_weak_slice_set(g, q, dd) and is_weak_slice_set(g, q0, dd))


def residual(g: PCFG, q: Iterable[int]) -> PCFG:
    """The graph with nodes outside Q neutralized.

    Non-branch nodes become Skip.  Branch nodes outside Q keep their
    condition for display but are marked inert, so the interpreter routes
    all their mass straight to the first proper postdominator.
    """
    q = frozenset(q)
    labels = {}
    inert = set()
    for v in g.nodes:
        lab = g.labels[v]
        if v in q or v == g.end:
            labels[v] = lab
        elif isinstance(lab, Branch):
            labels[v] = lab
            inert.add(v)
        else:
            labels[v] = Skip()
    return g.relabel(labels, inert)
