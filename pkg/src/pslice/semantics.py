"""Exact distribution semantics of pCFGs.

Stores are tuples of integers laid out over a sorted variable universe;
a :class:`Distribution` maps stores to positive rationals.  The meaning
of a pCFG is the least fixpoint of the functional ``H_X`` (see
:func:`apply_functional`), approximated by its iterates ``H_X^k(0)``.
"""

from __future__ import annotations

import sys
import threading
from dataclasses import dataclass, field
from fractions import Fraction
from itertools import product
from typing import Any, Callable, Iterable, Mapping, Optional, Sequence

from . import expr as ex
from .pcfg import (PCFG, AnalysisTables, Assign, Branch, DistExpr, NotPostdominator,
                   Observe, RandomAssign, analyze)

Store = tuple[int, ...]


class OverlappingSets(ValueError):
    pass


class Distribution:
    """A sparse sub-probability distribution over full stores."""

    __slots__ = ("variables", "mass")

    def __init__(self, variables: Sequence[str], mass: Optional[Mapping[Store, Any]] = None):
        self.variables = tuple(variables)
        self.mass: dict[Store, Fraction] = {}
        for s, p in (mass or {}).items():
            p = Fraction(p)
            if p < 0:
                raise ValueError(f"negative mass {p}")
            if p:
                if len(s) != len(self.variables):
                    raise ValueError(f"store {s} does not match variables {self.variables}")
                self.mass[tuple(s)] = p

    @classmethod
    def zero(cls, variables: Sequence[str]) -> "Distribution":
        return cls(variables)

    @classmethod
    def point(cls, variables: Sequence[str], store: Mapping[str, int] | Store,
              p: Any = 1) -> "Distribution":
        if isinstance(store, Mapping):
            store = tuple(store[x] for x in variables)
        return cls(variables, {tuple(store): p})

    @classmethod
    def _raw(cls, variables: tuple[str, ...], mass: dict[Store, Fraction]) -> "Distribution":
        d = cls.__new__(cls)
        d.variables = variables
        d.mass = mass
        return d

    def __iter__(self):
        return iter(sorted(self.mass.items()))

    def __len__(self):
        return len(self.mass)

    def __getitem__(self, store: Store) -> Fraction:
        return self.mass.get(tuple(store), Fraction(0))

    def __eq__(self, other):
        if not isinstance(other, Distribution):
            return NotImplemented
        return self.variables == other.variables and self.mass == other.mass

    def __hash__(self):
        return hash((self.variables, frozenset(self.mass.items())))

    def __repr__(self):
        body = ", ".join(f"{self.store_dict(s)}: {p}" for s, p in self)
        return f"Distribution({{{body}}})"

    def __add__(self, other: "Distribution") -> "Distribution":
        self._check(other)
        out = dict(self.mass)
        for s, p in other.mass.items():
            out[s] = out.get(s, 0) + p
        return Distribution._raw(self.variables, out)

    def scale(self, c: Any) -> "Distribution":
        c = Fraction(c)
        if c < 0:
            raise ValueError("negative scale factor")
        if c == 0:
            return Distribution(self.variables)
        return Distribution._raw(self.variables, {s: c * p for s, p in self.mass.items()})

    def __rmul__(self, c):
        return self.scale(c)

    def _check(self, other: "Distribution"):
        if self.variables != other.variables:
            raise ValueError(f"variable layouts differ: {self.variables} vs {other.variables}")

    def is_zero(self) -> bool:
        return not self.mass

    def total(self) -> Fraction:
        return sum(self.mass.values(), Fraction(0))

    def store_dict(self, s: Store) -> dict[str, int]:
        return dict(zip(self.variables, s))

    def project(self, names: Iterable[str]) -> dict[Store, Fraction]:
        """Marginal table over ``names`` (in the given order)."""
        names = tuple(names)
        idx = [self._index(x) for x in names]
        out: dict[Store, Fraction] = {}
        for s, p in self.mass.items():
            key = tuple(s[i] for i in idx)
            out[key] = out.get(key, 0) + p
        return out

    def marginal(self, partial: Mapping[str, int]) -> Fraction:
        """Mass of all full stores agreeing with ``partial``."""
        idx = [(self._index(x), v) for x, v in partial.items()]
        return sum((p for s, p in self.mass.items() if all(s[i] == v for i, v in idx)),
                   Fraction(0))

    def _index(self, x: str) -> int:
        try:
            return self.variables.index(x)
        except ValueError:
            raise KeyError(f"unknown variable {x!r}") from None

    def to_json(self) -> dict[str, Any]:
        return {
            "mass": [{"store": self.store_dict(s), "p": str(p)} for s, p in self],
            "total": str(self.total()),
        }

    @classmethod
    def from_json(cls, raw: Mapping[str, Any], variables: Optional[Sequence[str]] = None
                  ) -> "Distribution":
        entries = raw["mass"]
        if variables is None:
            names: set[str] = set()
            for e in entries:
                names |= set(e["store"])
            variables = sorted(names)
        mass: dict[Store, Fraction] = {}
        for e in entries:
            missing = set(variables) - set(e["store"])
            if missing:
                raise ValueError(f"store {e['store']} lacks {sorted(missing)}")
            s = tuple(int(e["store"][x]) for x in variables)
            mass[s] = mass.get(s, 0) + Fraction(e["p"])
        return cls(variables, mass)


def point_mass(g: PCFG, store: Optional[Mapping[str, int]] = None) -> Distribution:
    """Unit point mass; unspecified variables are 0."""
    store = store or {}
    return Distribution.point(g.variables, {x: store.get(x, 0) for x in g.variables})


def _max_diff(a: Mapping, b: Mapping) -> Fraction:
    return max((abs(a.get(k, 0) - b.get(k, 0)) for k in a.keys() | b.keys()),
               default=Fraction(0))


def agrees(d1: Distribution, d2: Distribution, r: Iterable[str], tol: Any = 0) -> bool:
    """Do the marginals on ``r`` coincide (up to ``tol`` per partial store)?"""
    r = sorted(r)
    return _max_diff(d1.project(r), d2.project(r)) <= Fraction(tol)


def independence_violations(d: Distribution, r1: Iterable[str], r2: Iterable[str],
                            tol: Any = 0):
    """Yield (s1, s2, D(s1+s2)*||D||, D(s1)*D(s2)) for every failure of the product law."""
    r1, r2 = sorted(r1), sorted(r2)
    if set(r1) & set(r2):
        raise OverlappingSets(f"{sorted(set(r1) & set(r2))} in both sets")
    tol = Fraction(tol)
    total = d.total()
    m1, m2, joint = d.project(r1), d.project(r2), d.project(r1 + r2)
    for s1, p1 in sorted(m1.items()):
        for s2, p2 in sorted(m2.items()):
            lhs = joint.get(s1 + s2, Fraction(0)) * total
            rhs = p1 * p2
            if abs(lhs - rhs) > tol:
                yield dict(zip(r1, s1)), dict(zip(r2, s2)), lhs, rhs


def independent(d: Distribution, r1: Iterable[str], r2: Iterable[str], tol: Any = 0) -> bool:
    return next(independence_violations(d, r1, r2, tol), None) is None


# --- transfer functions ----------------------------------------------------------------

@dataclass
class Diagnostics:
    """Counts stores whose mass was dropped because an expression was undefined."""

    evaluation_errors: int = 0


def _env(variables: tuple[str, ...], s: Store) -> dict[str, int]:
    return dict(zip(variables, s))


def _check_vars(e, variables):
    missing = ex.free_vars(e) - set(variables)
    if missing:
        raise KeyError(f"variables {sorted(missing)} are not in the store universe")


def select(b: ex.BoolExpr, d: Distribution, diag: Optional[Diagnostics] = None) -> Distribution:
    _check_vars(b, d.variables)
    out = {}
    for s, p in d.mass.items():
        try:
            keep = ex.evaluate(b, _env(d.variables, s))
        except ex.EvaluationError:
            if diag is not None:
                diag.evaluation_errors += 1
            continue
        if keep:
            out[s] = p
    return Distribution._raw(d.variables, out)


def assign_transfer(x: str, e: ex.ArithExpr, d: Distribution,
                    diag: Optional[Diagnostics] = None) -> Distribution:
    _check_vars(e, d.variables)
    i = d._index(x)
    out: dict[Store, Fraction] = {}
    for s, p in d.mass.items():
        try:
            value = ex.evaluate(e, _env(d.variables, s))
        except ex.EvaluationError:
            if diag is not None:
                diag.evaluation_errors += 1
            continue
        t = s[:i] + (value,) + s[i + 1:]
        out[t] = out.get(t, 0) + p
    return Distribution._raw(d.variables, out)


def rassign_transfer(x: str, psi: DistExpr, d: Distribution) -> Distribution:
    i = d._index(x)
    out: dict[Store, Fraction] = {}
    for s, p in d.mass.items():
        for value, q in psi:
            t = s[:i] + (value,) + s[i + 1:]
            out[t] = out.get(t, 0) + p * q
    return Distribution._raw(d.variables, out)


# --- modification functions and the functional H_X -------------------------------------

class ZeroFunction:
    """The bottom modification function: every transformer returns 0."""

    k = 0

    def __init__(self, variables: Sequence[str]):
        self.variables = tuple(variables)

    def apply(self, v: int, v2: int, d: Distribution) -> Distribution:
        return Distribution(d.variables)

    def point(self, v: int, v2: int, s: Store) -> Distribution:
        return Distribution(self.variables)


class Level:
    """H_X(prev): one application of the functional, evaluated lazily.

    Transformers are linear, so each branch step is computed per store
    and cached; ``lookups`` records every (v, v2, store) at which this
    level consulted ``prev``.
    """

    def __init__(self, g: PCFG, t: AnalysisTables, x: Iterable[int], prev,
                 variables: Sequence[str], diag: Optional[Diagnostics] = None):
        self.g, self.t, self.x = g, t, frozenset(x)
        self.prev = prev
        self.k = prev.k + 1
        self.variables = tuple(variables)
        self.diag = diag if diag is not None else Diagnostics()
        self._branch_cache: dict[tuple[int, Store], Distribution] = {}
        self.lookups: list[tuple[int, int, Store]] = []
        self._looked_up: set[tuple[int, int, Store]] = set()

    def point(self, v: int, v2: int, s: Store) -> Distribution:
        return self.apply(v, v2, Distribution._raw(self.variables, {s: Fraction(1)}))

    def apply(self, v: int, v2: int, d: Distribution) -> Distribution:
        if v2 not in self.t.pd[v]:
            raise NotPostdominator(f"{v2} does not postdominate {v}")
        # clause 2, unrolled along the chain of first proper postdominators
        while v != v2 and not d.is_zero():
            d = self._step(v, d)
            v = self.t.fppd[v]
        return d

    def _step(self, v: int, d: Distribution) -> Distribution:
        """h(v, fppd v)(d)."""
        lab = self.g.labels[v]
        if v not in self.x:
            return d
        if isinstance(lab, Assign):
            return assign_transfer(lab.var, lab.expr, d, self.diag)
        if isinstance(lab, RandomAssign):
            return rassign_transfer(lab.var, lab.dist, d)
        if isinstance(lab, Observe):
            return select(lab.cond, d, self.diag)
        if isinstance(lab, Branch):
            out: dict[Store, Fraction] = {}
            for s, p in d.mass.items():
                for t, q in self._branch_point(v, lab, s).mass.items():
                    out[t] = out.get(t, 0) + p * q
            return Distribution._raw(d.variables, out)
        return d  # skip, start

    def _branch_point(self, v: int, lab: Branch, s: Store) -> Distribution:
        key = (v, s)
        hit = self._branch_cache.get(key)
        if hit is not None:
            return hit
        try:
            taken = ex.evaluate(lab.cond, _env(self.variables, s))
        except ex.EvaluationError:
            self.diag.evaluation_errors += 1
            result = Distribution(self.variables)
        else:
            succ = self.g.succ[v][0 if taken else 1]
            v2 = self.t.fppd[v]
            if self.t.lap_of(succ, v2) < self.t.lap_of(v, v2):
                result = self.point(succ, v2, s)
            else:
                if (succ, v2, s) not in self._looked_up:
                    self._looked_up.add((succ, v2, s))
                    self.lookups.append((succ, v2, s))
                result = self.prev.point(succ, v2, s)
        self._branch_cache[key] = result
        return result


def apply_functional(g: PCFG, t: AnalysisTables, x: Iterable[int], h0, v: int, v2: int,
                     d: Distribution, diag: Optional[Diagnostics] = None) -> Distribution:
    """H_X(h0)(v, v2)(d)."""
    return Level(g, t, x, h0, d.variables, diag).apply(v, v2, d)


# --- fixpoint iteration ------------------------------------------------------------------

DEFAULT_EPSILON = Fraction(1, 10**9)


@dataclass(frozen=True)
class FixpointConfig:
    epsilon: Fraction = DEFAULT_EPSILON
    k_max: int = 500
    stop: str = "auto"  # "auto": exact or epsilon; "exact": exact stabilization only
    check_limit: int = 20000  # most keys examined by one stabilization check

    def __post_init__(self):
        object.__setattr__(self, "epsilon", Fraction(self.epsilon))
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.k_max < 1:
            raise ValueError("k_max must be at least 1")
        if self.stop not in ("auto", "exact"):
            raise ValueError(f"unknown stop rule {self.stop!r}")


@dataclass
class FixpointResult:
    function: Any  # the last Level computed
    output: Distribution  # h(v, v2)(d0) for the queried pair
    iterations: int
    converged: bool
    exact: bool
    diagnostics: Diagnostics = field(default_factory=Diagnostics)

    def iterate(self, k: int):
        """The k-th iterate H_X^k(0), for k up to ``iterations``."""
        h = self.function
        if not 0 <= k <= h.k:
            raise IndexError(k)
        while h.k > k:
            h = h.prev
        return h


class IterationLimitExceeded(RuntimeError):
    def __init__(self, result: FixpointResult):
        self.result = result
        super().__init__(f"no convergence after {result.iterations} iterations")


def _stabilized(level: Level, limit: int) -> bool:
    """Is level equal to level.prev on every key level depends on?

    If so, every later iterate repeats the same computation on those keys,
    so the values computed so far are exact.
    """
    prev = level.prev
    done = 0
    while done < len(level.lookups):  # grows as new keys are evaluated
        if done >= limit:
            return False
        key = level.lookups[done]
        done += 1
        if level.point(*key) != prev.point(*key):
            return False
    return True


def _with_deep_stack(fn: Callable[[], Any]) -> Any:
    # lazily evaluated iterates can recurse through many levels
    box: dict[str, Any] = {}

    def target():
        try:
            box["value"] = fn()
        except BaseException as err:  # re-raised in the caller's thread
            box["error"] = err

    old_limit = sys.getrecursionlimit()
    old_size = threading.stack_size()
    sys.setrecursionlimit(max(old_limit, 200000))
    threading.stack_size(512 * 1024 * 1024)
    try:
        worker = threading.Thread(target=target)
        worker.start()
        worker.join()
    finally:
        threading.stack_size(old_size)
        sys.setrecursionlimit(old_limit)
    if "error" in box:
        raise box["error"]
    return box["value"]


def fixpoint(g: PCFG, t: Optional[AnalysisTables] = None, x: Optional[Iterable[int]] = None,
             config: FixpointConfig = FixpointConfig(), d0: Optional[Distribution] = None,
             query: Optional[tuple[int, int]] = None) -> FixpointResult:
    """Iterate H_X from 0 until the queried output stabilizes.

    Stops when the level no longer differs from its predecessor on any key
    it depends on (exact), or, with ``stop="auto"``, when successive
    outputs differ by less than epsilon and the geometric tail estimated
    from the last two differences is below epsilon too.  Raises
    :class:`IterationLimitExceeded` after ``k_max`` iterations.
    """
    t = t if t is not None else analyze(g)
    x = frozenset(g.nodes) - g.inert if x is None else frozenset(x)
    d0 = d0 if d0 is not None else point_mass(g)
    v, v2 = query if query is not None else (g.start, g.end)
    return _with_deep_stack(lambda: _iterate(g, t, x, config, d0, v, v2))


def _iterate(g, t, x, config, d0, v, v2) -> FixpointResult:
    diag = Diagnostics()
    h: Any = ZeroFunction(d0.variables)
    out = h.apply(v, v2, d0)
    diffs: list[Fraction] = []
    while h.k < config.k_max:
        h = Level(g, t, x, h, d0.variables, diag)
        new = h.apply(v, v2, d0)
        diff = max(_max_diff(new.mass, out.mass), abs(new.total() - out.total()))
        out = new
        if _stabilized(h, config.check_limit):
            return FixpointResult(h, out, h.k, True, True, diag)
        if config.stop == "auto" and 0 < diff < config.epsilon and diffs and diffs[-1] > diff:
            ratio = diff / diffs[-1]
            if diff * ratio / (1 - ratio) < config.epsilon:
                return FixpointResult(h, out, h.k, True, False, diag)
        diffs.append(diff)
    raise IterationLimitExceeded(FixpointResult(h, out, h.k, False, False, diag))


@dataclass
class RunResult:
    output: Distribution
    iterations: int
    converged: bool
    exact: bool
    input_mass: Fraction
    output_mass: Fraction
    evaluation_errors: int = 0

    def to_json(self) -> dict[str, Any]:
        out = self.output.to_json()
        out.update(iterations=self.iterations, converged=self.converged, exact=self.exact)
        return out


def run(g: PCFG, x: Optional[Iterable[int]] = None, d0: Optional[Distribution] = None,
        config: FixpointConfig = FixpointConfig(), t: Optional[AnalysisTables] = None,
        allow_truncated: bool = False) -> RunResult:
    """h(Start, End)(d0) for the fixpoint of H_X (X defaults to all live nodes)."""
    d0 = d0 if d0 is not None else point_mass(g)
    try:
        res = fixpoint(g, t, x, config, d0)
    except IterationLimitExceeded as err:
        if not allow_truncated:
            raise
        res = err.result
    return RunResult(res.output, res.iterations, res.converged, res.exact,
                     d0.total(), res.output.total(), res.diagnostics.evaluation_errors)


# --- sum preservation -----------------------------------------------------------------------

@dataclass(frozen=True)
class SumPreservation:
    verdict: str  # preserving | preserving-approx | violating | unknown
    witness: Optional[dict[str, int]] = None
    shortfall: Fraction = Fraction(0)


def default_test_stores(g: PCFG, values: Iterable[int] = range(4)) -> list[dict[str, int]]:
    values = list(values)
    return [dict(zip(g.variables, vs)) for vs in product(values, repeat=len(g.variables))]


def sum_preserving_check(g: PCFG, t: Optional[AnalysisTables], v: int,
                         config: FixpointConfig = FixpointConfig(),
                         stores: Optional[Iterable[Mapping[str, int]]] = None) -> SumPreservation:
    """Test whether omega(v, fppd v) preserves mass on concentrated inputs.

    Violating: some store loses mass (beyond epsilon when only approximately
    converged).  Preserving: every store keeps its mass under exact
    stabilization.  Preserving-approx: mass kept within epsilon.  Unknown:
    some run was truncated.
    """
    t = t if t is not None else analyze(g)
    v2 = t.fppd[v]
    stores = default_test_stores(g) if stores is None else list(stores)
    verdict = "preserving"
    for s in stores:
        d0 = point_mass(g, s)
        try:
            res = fixpoint(g, t, None, config, d0, (v, v2))
        except IterationLimitExceeded:
            verdict = "unknown"
            continue
        shortfall = 1 - res.output.total()
        if res.exact and shortfall > 0 or shortfall >= config.epsilon:
            return SumPreservation("violating", dict(s), shortfall)
        if not res.exact and verdict == "preserving":
            verdict = "preserving-approx"
    return SumPreservation(verdict)
