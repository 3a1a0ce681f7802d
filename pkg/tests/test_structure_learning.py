from __future__ import annotations

import math
import warnings

import numpy as np
import pytest

from fairlens.bayes_net import binary_schema, sample
from fairlens.causal_graph import Dag
from fairlens.errors import FairlensError, GraphError
from fairlens.structure_learning import TierSpec, find_q, g2_test, load_tiers, pc_learn
from fairlens.synthetic import logistic_bn, random_dag


def _net(nodes, arcs, overrides, n=20000, seed=1):
    g = Dag(nodes, arcs)
    bn = logistic_bn(g, binary_schema(nodes, nodes[0], nodes[-1]), np.random.default_rng(seed),
                     overrides=overrides)
    return g, sample(bn, n, seed)


def skeleton(g):
    return {frozenset(a) for a in g.arcs}


def g2_by_hand(ds, x, y, z):
    """Loop over strata and cells; zero cells contribute nothing."""
    cols = {n: ds.column(n) for n in [x, y, *z]}
    stat, df = 0.0, 0
    strata = {tuple(int(cols[v][i]) for v in z) for i in range(ds.n_rows)}
    for st in strata:
        mask = np.ones(ds.n_rows, bool)
        for v, val in zip(z, st):
            mask &= cols[v] == val
        xs, ys = cols[x][mask], cols[y][mask]
        n = mask.sum()
        kx = ds.schema.attribute(x).cardinality
        ky = ds.schema.attribute(y).cardinality
        for a in range(kx):
            for b in range(ky):
                o = int(((xs == a) & (ys == b)).sum())
                if o:
                    e = (xs == a).sum() * (ys == b).sum() / n
                    stat += 2 * o * math.log(o / e)
        df += (kx - 1) * (ky - 1)
    return stat, df


def test_g2_statistic_matches_hand_computation():
    _, ds = _net(list("ABC"), [("A", "B"), ("B", "C")],
                 {"A": (0.0, {}), "B": (-1.0, {"A": 2.0}), "C": (-1.0, {"B": 2.0})}, n=3000)
    for x, y, z in (("A", "C", ()), ("A", "C", ("B",)), ("B", "C", ("A",))):
        r = g2_test(ds, x, y, z)
        stat, df = g2_by_hand(ds, x, y, list(z))
        assert r.statistic == pytest.approx(stat, rel=1e-9, abs=1e-9)
        assert r.degrees_of_freedom == df
    assert g2_test(ds, "A", "C", ("B",)).independent
    assert not g2_test(ds, "A", "C").independent
    assert not g2_test(ds, "A", "C", method="pearson").independent


def test_g2_rejects_bad_arguments():
    _, ds = _net(list("AB"), [("A", "B")], {"A": (0.0, {}), "B": (0.0, {"A": 2.0})}, n=100)
    with pytest.raises(FairlensError):
        g2_test(ds, "A", "A")
    with pytest.raises(FairlensError):
        g2_test(ds, "A", "B", method="fisher")


def test_chain_recovery():
    g, ds = _net(list("ABC"), [("A", "B"), ("B", "C")],
                 {"A": (0.0, {}), "B": (-1.0, {"A": 2.0}), "C": (-1.0, {"B": 2.0})})
    learned, log_ = pc_learn(ds, alpha=0.01, return_log=True)
    assert skeleton(learned) == skeleton(g)
    assert log_.v_structures == []
    assert pc_learn(ds, TierSpec([["A"], ["B"], ["C"]])) == g


def test_collider_recovery():
    g, ds = _net(["A", "B", "M"], [("A", "M"), ("B", "M")],
                 {"A": (0.0, {}), "B": (0.0, {}), "M": (-2.0, {"A": 2.0, "B": 2.0})})
    learned, log_ = pc_learn(ds, return_log=True)
    assert learned == g
    assert log_.v_structures == [("A", "M", "B")]


def test_tiers_are_respected():
    # the data says B -> A, but tiers force A first
    g, ds = _net(["B", "A", "C"], [("B", "A"), ("A", "C")],
                 {"B": (0.0, {}), "A": (-1.0, {"B": 2.0}), "C": (-1.0, {"A": 2.0})})
    t = TierSpec([["A"], ["B", "C"]])
    learned = pc_learn(ds, t)
    assert t.violations(learned) == []
    assert learned.has_arc("A", "B")


def test_tier_spec_validation(tmp_path):
    with pytest.raises(FairlensError, match="overlap"):
        TierSpec([["a"], ["a", "b"]])
    with pytest.raises(FairlensError, match="unknown"):
        TierSpec([["zz"]]).validate(["a"])
    p = tmp_path / "t.json"
    p.write_text('{"tiers": [["a"], ["b", "c"]]}')
    t = load_tiers(p)
    assert t.tier_of("c") == 1 and t.tier_of("unlisted") == 1
    assert TierSpec.from_json(t.to_json()) == t


def test_learn_is_deterministic():
    _, ds = _net(list("ABCD"), [("A", "B"), ("B", "C"), ("A", "D"), ("C", "D")],
                 {"A": (0.0, {}), "B": (-1.0, {"A": 2.0}), "C": (-1.0, {"B": 2.0}),
                  "D": (-2.0, {"A": 2.0, "C": 2.0})}, n=5000)
    a, la = pc_learn(ds, return_log=True)
    b, lb = pc_learn(ds, return_log=True)
    assert a == b and la.to_json() == lb.to_json()


def test_threaded_skeleton_matches(monkeypatch):
    _, ds = _net(list("ABCD"), [("A", "B"), ("B", "C"), ("A", "D"), ("C", "D")],
                 {"A": (0.0, {}), "B": (-1.0, {"A": 2.0}), "C": (-1.0, {"B": 2.0}),
                  "D": (-2.0, {"A": 2.0, "C": 2.0})}, n=5000)
    base = pc_learn(ds, return_log=True)
    monkeypatch.setenv("FAIRLENS_THREADS", "4")
    threaded = pc_learn(ds, return_log=True)
    assert base[0] == threaded[0] and base[1].to_json() == threaded[1].to_json()


def test_learned_graph_is_acyclic_and_tier_consistent(rng):
    for _ in range(8):
        g = random_dag(6, rng, 0.4)
        bn = logistic_bn(g, binary_schema(g.nodes, g.nodes[0], g.nodes[-1]), rng)
        ds = sample(bn, 4000, int(rng.integers(1000)))
        order = g.topological_order()
        t = TierSpec([order[:2], order[2:4], order[4:]])
        learned = pc_learn(ds, t)
        assert t.violations(learned) == []
        assert learned.topological_order()  # constructor already rejects cycles


def test_alpha_monotone_skeleton(rng):
    # larger alpha rejects independence more readily and keeps more edges
    for _ in range(10):
        g = random_dag(5, rng, 0.4)
        bn = logistic_bn(g, binary_schema(g.nodes, g.nodes[0], g.nodes[-1]), rng)
        ds = sample(bn, 5000, int(rng.integers(1000)))
        edges = [len(skeleton(pc_learn(ds, alpha=a))) for a in (0.001, 0.01, 0.05, 0.2)]
        assert edges == sorted(edges)


def test_pc_argument_errors(toy1):
    with pytest.raises(FairlensError):
        pc_learn(toy1, alpha=0.0)


def test_find_q(toy_g, toy1):
    assert find_q(toy_g, toy1.schema) == ("major", "test_score")
    only_c = Dag(["C", "E", "x"], [("C", "E"), ("x", "C")])
    assert find_q(only_c, binary_schema(only_c.nodes, "C", "E")) == ()
    no_arc = Dag(["C", "E", "x"], [("x", "E")])
    s = binary_schema(no_arc.nodes, "C", "E")
    with warnings.catch_warnings(record=True) as w:
        warnings.simplefilter("always")
        assert find_q(no_arc, s) == ("x",)
    assert any("absent" in str(x.message) for x in w)
    with pytest.raises(GraphError, match="absent"):
        find_q(no_arc, s, strict=True)
