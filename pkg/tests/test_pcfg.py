import json
import random

import pytest
from hypothesis import given, settings, strategies as st

from pslice.expr import parse_arith, parse_bool
from pslice.pcfg import (Assign, Branch, DistExpr, EndHasNoFppd, NotPostdominator, Observe,
                         PCFGError, RandomAssign, Return, Skip, analyze, fppd, lap, make_pcfg,
                         postdominators, to_dot, to_json, validate)
from support import fixture, lap_oracle, pd_oracle, random_graph

seeds = st.integers(0, 2**32 - 1)


def kinds(err):
    return sorted(v.kind for v in err.value.violations)


# --- construction and validation ---------------------------------------------------------

def test_dist_expr_checks_weights():
    with pytest.raises(ValueError):
        DistExpr.of({0: "1/2", 1: "1/3"})
    with pytest.raises(ValueError):
        DistExpr.of({0: "3/2", 1: "-1/2"})
    d = DistExpr.of({2: "1/2", 0: "1/2", 5: 0})
    assert d.support == ((0, 0.5), (2, 0.5))
    assert DistExpr.uniform(0, 3).as_range() == (0, 3)
    assert DistExpr.uniform(0, 3).show() == "uniform(0..3)"
    assert d.show() == "{0: 1/2, 2: 1/2}"


def _labels():
    return {1: RandomAssign("x", DistExpr.uniform(0, 1)), 2: Observe(parse_bool("x > 0")),
            3: Return("x")}


def test_make_pcfg_accepts_chain():
    g = make_pcfg(_labels(), {1: [2], 2: [3]}, 1, 3)
    assert g.nodes == (1, 2, 3)
    assert g.pred[3] == (2,)
    assert g.variables == ("x",)


def test_multiple_ends_and_end_successor():
    labels = _labels()
    labels[4] = Skip()
    with pytest.raises(PCFGError) as err:
        make_pcfg(labels, {1: [2], 2: [3], 3: [4]}, 1, 3)
    assert "EndHasSuccessor" in kinds(err) and "MultipleEnds" in kinds(err)


def test_unreachable_and_no_path_to_end():
    labels = {1: RandomAssign("x", DistExpr.uniform(0, 1)), 2: Branch(parse_bool("x > 0")),
              3: Skip(), 4: Return("x"), 5: Skip()}
    with pytest.raises(PCFGError) as err:
        make_pcfg(labels, {1: [2], 2: [3, 4], 3: [3], 5: [4]}, 1, 4)
    assert kinds(err) == ["NoPathToEnd", "UnreachableNode"]


def test_bad_arity_and_labels():
    labels = {1: Branch(parse_bool("true")), 2: Return("x"), 3: Return("x")}
    with pytest.raises(PCFGError) as err:
        make_pcfg(labels, {1: [3], 2: [3]}, 1, 3)
    assert kinds(err) == ["BadArity", "BadLabel"]


def test_use_before_def():
    labels = {1: Assign("x", parse_arith("y + 1")), 2: Return("x")}
    with pytest.raises(PCFGError) as err:
        make_pcfg(labels, {1: [2]}, 1, 2)
    assert [(v.kind, v.node, v.detail) for v in err.value.violations] == [("UseBeforeDef", 1, "y")]


def test_use_before_def_on_one_path_only():
    labels = {1: RandomAssign("x", DistExpr.uniform(0, 1)), 2: Branch(parse_bool("x == 0")),
              3: Assign("y", parse_arith("1")), 4: Return("y")}
    with pytest.raises(PCFGError):
        make_pcfg(labels, {1: [2], 2: [3, 4], 3: [4]}, 1, 4)


def test_unknown_node():
    with pytest.raises(PCFGError) as err:
        make_pcfg(_labels(), {1: [2], 2: [9]}, 1, 3)
    assert kinds(err) == ["UnknownNode"]


def test_json_round_trip():
    for name in ["p1", "p3", "p4_inc"]:
        g = fixture(name)
        raw = json.loads(json.dumps(to_json(g)))
        h = validate(raw)
        assert to_json(h) == to_json(g)
        assert h.succ == g.succ


def test_validate_reports_branch_without_labels():
    raw = {"nodes": [{"id": 1, "label": {"kind": "rassign", "var": "x", "dist": {"uniform": [0, 1]}}},
                     {"id": 2, "label": {"kind": "branch", "cond": "x > 0"}},
                     {"id": 3, "label": {"kind": "return", "var": "x"}}],
           "edges": [{"from": 1, "to": 2}, {"from": 2, "to": 3}, {"from": 2, "to": 3}],
           "start": 1, "end": 3}
    with pytest.raises(PCFGError) as err:
        validate(raw)
    assert kinds(err) == ["BadArity"]


def test_dot_output():
    g = fixture("p3")
    dot = to_dot(g)
    assert dot.count("->") == 5
    assert 'n2 -> n3 [label="T"]' in dot and 'n2 -> n5 [label="F"]' in dot
    assert "shape=diamond" in dot and "doublecircle" in dot
    lit = to_dot(fixture("p1"), {1, 4}, {2, 3}, highlight=True)
    assert lit.count("style=solid") == 2 and lit.count("style=dashed") == 2


# --- postdominators, fppd, LAP --------------------------------------------------------------

def test_p4_structure():
    g = fixture("p4_inc")
    t = analyze(g)
    assert t.fppd[1] == 2 and t.fppd[3] == 6 and t.fppd[5] == 4 and t.fppd[4] == 6
    assert t.lap_of(5, 6) == 2 and t.lap_of(4, 6) == 1
    assert t.cycle_inducing == {4}
    with pytest.raises(NotPostdominator):
        t.lap_of(4, 5)
    with pytest.raises(NotPostdominator):
        lap(g, 4, 5)
    with pytest.raises(EndHasNoFppd):
        fppd(g, t.pd, 6)


def test_if_branches_are_not_cycle_inducing():
    for name in ["p1", "p2", "p3"]:
        assert analyze(fixture(name)).cycle_inducing == set()


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_postdominators_match_oracle(seed):
    g = random_graph(random.Random(seed))
    assert postdominators(g) == pd_oracle(g)


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_lap_matches_path_enumeration(seed):
    g = random_graph(random.Random(seed))
    t = analyze(g)
    for (v, w), n in t.lap.items():
        assert n == lap_oracle(g, v, w)
    assert set(t.lap) == {(v, w) for v in g.nodes for w in t.pd[v]}


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_fppd_is_nearest_proper_postdominator(seed):
    g = random_graph(random.Random(seed))
    t = analyze(g)
    for v, w in t.fppd.items():
        assert w in t.pd[v] and w != v
        # every other proper postdominator of v postdominates w
        assert all(u in t.pd[w] for u in t.pd[v] - {v})


@settings(max_examples=150, deadline=None)
@given(seeds)
def test_every_cycle_contains_a_cycle_inducing_node(seed):
    import networkx as nx
    from support import digraph

    g = random_graph(random.Random(seed))
    t = analyze(g)
    assert all(g.is_branch(v) for v in t.cycle_inducing)
    for cycle in nx.simple_cycles(digraph(g)):
        assert set(cycle) & t.cycle_inducing
