"""Toy admission data and random networks for tests, benchmarks and demos."""

from __future__ import annotations

import numpy as np

from .bayes_net import BayesNet, Cpt, binary_schema, sample
from .tabular_data import Attribute, Dataset, Schema
from .errors import FairlensError
from .causal_graph import Dag

TOY_NODES = ("gender", "major", "test_score", "admission")
TOY_ARCS = (("gender", "major"), ("major", "test_score"), ("gender", "admission"),
            ("major", "admission"), ("test_score", "admission"))

# (gender, major, test_score): (applicants, admitted)
_TOY_COUNTS = {
    1: {("female", "CS", "L"): (450, 90), ("female", "EE", "L"): (150, 60),
        ("male", "CS", "L"): (150, 30), ("male", "EE", "L"): (450, 180),
        ("female", "CS", "H"): (300, 150), ("female", "EE", "H"): (100, 70),
        ("male", "CS", "H"): (100, 50), ("male", "EE", "H"): (300, 210)},
    2: {("female", "CS", "L"): (450, 135), ("female", "CS", "H"): (300, 150),
        ("male", "CS", "L"): (150, 54), ("male", "CS", "H"): (100, 40),
        ("female", "EE", "L"): (600, 240), ("female", "EE", "H"): (300, 180),
        ("male", "EE", "L"): (200, 90), ("male", "EE", "H"): (100, 50)},
}


def toy_graph() -> Dag:
    return Dag(TOY_NODES, TOY_ARCS)


def toy_schema() -> Schema:
    attrs = (Attribute("gender", ("female", "male")), Attribute("major", ("CS", "EE")),
             Attribute("test_score", ("L", "H")), Attribute("admission", ("no", "yes")))
    return Schema(attrs, "gender", "admission", positive_label="yes", protected_label="female")


def toy_counts(example: int) -> dict[tuple[str, str, str], tuple[int, int]]:
    if example not in _TOY_COUNTS:
        raise FairlensError("toy example must be 1 or 2")
    return dict(_TOY_COUNTS[example])


def toy_dataset(example: int) -> Dataset:
    """Toy example 1 (2000 applicants) or 2 (2200), one row each, admitted rows first per group."""
    schema = toy_schema()
    rows = []
    for (gender, major, score), (n, admitted) in toy_counts(example).items():
        base = [schema.code("gender", gender), schema.code("major", major), schema.code("test_score", score)]
        rows += [base + [1]] * admitted + [base + [0]] * (n - admitted)
    return Dataset(schema, np.array(rows, dtype=np.int64))


def random_dag(n_nodes: int, rng: np.random.Generator, p_arc: float = 0.5,
               names: tuple[str, ...] | None = None) -> Dag:
    """Random DAG whose arcs respect the declaration order ``names``."""
    names = names or tuple(f"v{i}" for i in range(n_nodes))
    arcs = [(names[i], names[j]) for i in range(n_nodes) for j in range(i + 1, n_nodes)
            if rng.random() < p_arc]
    return Dag(names, arcs)


def random_discrimination_dag(n_nodes: int, rng: np.random.Generator, p_arc: float = 0.5) -> Dag:
    """Random DAG over ``C``, ``E`` and ``v*`` nodes that contains the arc C -> E.

    C and E are placed at random positions of a random node order, so Q may
    contain ancestors of C and E may have children.
    """
    if n_nodes < 2:
        raise FairlensError("need at least two nodes")
    names = ["C", "E"] + [f"v{i}" for i in range(n_nodes - 2)]
    order = [names[i] for i in rng.permutation(n_nodes)]
    if order.index("C") > order.index("E"):
        i, j = order.index("C"), order.index("E")
        order[i], order[j] = order[j], order[i]
    arcs = {("C", "E")}
    for i in range(n_nodes):
        for j in range(i + 1, n_nodes):
            if rng.random() < p_arc:
                arcs.add((order[i], order[j]))
    return Dag(tuple(names), arcs)


def random_cpts(dag: Dag, schema: Schema, rng: np.random.Generator,
                low: float = 0.05, high: float = 0.95) -> dict[str, Cpt]:
    cpts = {}
    for n in dag.nodes:
        parents = tuple(p for p in dag.nodes if p in dag.parents(n))
        shape = tuple(schema.attribute(p).cardinality for p in parents)
        k = schema.attribute(n).cardinality
        if k == 2:
            p1 = rng.uniform(low, high, size=shape)
            table = np.stack([1 - p1, p1], axis=-1)
        else:
            raw = rng.uniform(low, high, size=shape + (k,))
            table = raw / raw.sum(axis=-1, keepdims=True)
        cpts[n] = Cpt(n, parents, table)
    return cpts


def random_bn(n_nodes: int, rng: np.random.Generator, p_arc: float = 0.5,
              low: float = 0.05, high: float = 0.95) -> BayesNet:
    """Binary network with the arc C -> E and CPT entries drawn from U(low, high)."""
    dag = random_discrimination_dag(n_nodes, rng, p_arc)
    schema = binary_schema(dag.nodes, "C", "E")
    return BayesNet(dag, schema, random_cpts(dag, schema, rng, low, high))


def logistic_bn(dag: Dag, schema: Schema, rng: np.random.Generator, strength: float = 2.5,
                overrides: dict[str, tuple[float, dict[str, float]]] | None = None) -> BayesNet:
    """Binary network where each node is a logistic function of its parents.

    Coefficients have magnitude in [strength, 2 * strength] with random signs;
    ``overrides`` maps a node to (intercept, {parent: coefficient}).
    """
    overrides = overrides or {}
    cpts = {}
    for n in dag.nodes:
        parents = tuple(p for p in dag.nodes if p in dag.parents(n))
        if n in overrides:
            b0, coef = overrides[n]
            w = np.array([coef.get(p, 0.0) for p in parents])
        else:
            w = rng.uniform(strength, 2 * strength, len(parents)) * rng.choice([-1, 1], len(parents))
            b0 = -0.5 * w.sum() + rng.uniform(-0.5, 0.5)
        grid = np.array(np.meshgrid(*[[0, 1]] * len(parents), indexing="ij")).reshape(len(parents), -1).T \
            if parents else np.zeros((1, 0))
        p1 = 1 / (1 + np.exp(-(b0 + grid @ w)))
        table = np.stack([1 - p1, p1], axis=-1).reshape((2,) * len(parents) + (2,))
        cpts[n] = Cpt(n, parents, table)
    return BayesNet(dag, schema, cpts)


def benchmark_network(seed: int = 7) -> BayesNet:
    """Fixed six-attribute admission-style network with a strong direct effect of C on E.

    C -> E with E a sink; Q = {a, b, d}.
    """
    names = ("C", "a", "b", "d", "f", "E")
    arcs = [("C", "a"), ("C", "E"), ("a", "b"), ("a", "E"), ("b", "E"), ("d", "E"), ("d", "b"),
            ("C", "f"), ("f", "b")]
    dag = Dag(names, arcs)
    schema = binary_schema(names, "C", "E")
    rng = np.random.default_rng(seed)
    over = {"C": (0.2, {}), "E": (-1.6, {"C": 0.9, "a": 1.2, "b": 0.8, "d": -0.7}),
            "a": (-0.3, {"C": 0.8}), "d": (0.1, {}), "f": (0.0, {"C": -0.6}),
            "b": (-0.4, {"a": 0.9, "d": 0.5, "f": -0.7})}
    return logistic_bn(dag, schema, rng, overrides=over)


def benchmark_dataset(n: int = 50000, seed: int = 11) -> Dataset:
    return sample(benchmark_network(), n, seed)
