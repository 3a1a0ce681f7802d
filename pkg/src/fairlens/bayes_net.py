"""Discrete Bayesian networks: CPTs, exact inference and sampling."""

from __future__ import annotations

import json
import math
import string
from dataclasses import dataclass
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .tabular_data import Assignment, Attribute, Dataset, Schema
from .errors import CapacityError, GraphError, SchemaError, UndefinedProbabilityError
from .causal_graph import Dag

DEFAULT_JOINT_CAP = 2 ** 24
_LETTERS = string.ascii_letters


@dataclass(frozen=True, eq=False)
class Cpt:
    """Pr(node | parents) as an array of shape (*parent_cards, node_card)."""

    node: str
    parent_order: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        table = np.array(self.table, dtype=float, copy=True)
        object.__setattr__(self, "parent_order", tuple(self.parent_order))
        if table.ndim != len(self.parent_order) + 1:
            raise SchemaError(f"CPT of {self.node!r}: table rank does not match parent count")
        if (table < 0).any() or not np.isfinite(table).all():
            raise SchemaError(f"CPT of {self.node!r} has negative or non-finite entries")
        if not np.allclose(table.sum(axis=-1), 1.0, rtol=0, atol=1e-12):
            raise SchemaError(f"CPT rows of {self.node!r} do not sum to 1")
        table.setflags(write=False)
        object.__setattr__(self, "table", table)

    def row(self, parent_codes: Mapping[str, int]) -> np.ndarray:
        return self.table[tuple(parent_codes[p] for p in self.parent_order)]

    def transposed(self, parent_order: Sequence[str]) -> Cpt:
        perm = [self.parent_order.index(p) for p in parent_order] + [len(self.parent_order)]
        return Cpt(self.node, tuple(parent_order), np.transpose(self.table, perm))


@dataclass(frozen=True)
class JointDistribution:
    """Dense joint table with one axis per attribute, in ``names`` order."""

    names: tuple[str, ...]
    table: np.ndarray

    def __post_init__(self):
        if abs(self.table.sum() - 1.0) > 1e-9 or (self.table < 0).any():
            raise SchemaError("joint distribution is not normalized")

    def marginal(self, names: Sequence[str]) -> np.ndarray:
        keep = [self.names.index(n) for n in names]
        drop = tuple(i for i in range(len(self.names)) if i not in keep)
        m = self.table.sum(axis=drop)
        remaining = [i for i in range(len(self.names)) if i in keep]
        return np.transpose(m, [remaining.index(i) for i in keep])


class BayesNet:
    """A DAG over the schema attributes with one CPT per node."""

    def __init__(self, dag: Dag, schema: Schema, cpts: Mapping[str, Cpt]):
        if set(dag.nodes) != set(schema.names):
            raise SchemaError("graph nodes and schema attributes differ")
        for n in schema.names:
            if n not in cpts:
                raise SchemaError(f"missing CPT for {n!r}")
            cpt = cpts[n]
            if set(cpt.parent_order) != set(dag.parents(n)) or len(cpt.parent_order) != len(dag.parents(n)):
                raise SchemaError(f"CPT parents of {n!r} do not match the graph")
            expected = tuple(schema.attribute(p).cardinality for p in cpt.parent_order)
            expected += (schema.attribute(n).cardinality,)
            if cpt.table.shape != expected:
                raise SchemaError(f"CPT of {n!r} has shape {cpt.table.shape}, expected {expected}")
        self.dag = dag
        self.schema = schema
        self.cpts = {n: cpts[n] for n in schema.names}

    def __repr__(self):
        return f"BayesNet({self.dag!r})"

    @property
    def names(self) -> tuple[str, ...]:
        return self.schema.names

    def n_cells(self) -> int:
        return math.prod(self.schema.cardinalities)

    def factors(self, squared: bool = False, exclude: Sequence[str] = ()):
        """(array, axis names) pairs, one per CPT."""
        for n, cpt in self.cpts.items():
            if n in exclude:
                continue
            t = cpt.table ** 2 if squared else cpt.table
            yield t, cpt.parent_order + (n,)


def fit_cpts(dataset: Dataset, dag: Dag, smoothing: float = 0.0) -> BayesNet:
    """Maximum-likelihood CPTs; unobserved parent configurations get a uniform row.

    ``smoothing`` adds a pseudo-count to every cell (0 reproduces raw ratios).
    """
    schema = dataset.schema
    if set(dag.nodes) != set(schema.names):
        raise SchemaError("graph nodes and dataset attributes differ")
    w = dataset.row_weights()
    cpts = {}
    for node in schema.names:
        parents = tuple(p for p in dag.nodes if p in dag.parents(node))
        cards = tuple(schema.attribute(p).cardinality for p in parents) + (schema.attribute(node).cardinality,)
        cols = [dataset.column(p) for p in parents] + [dataset.column(node)]
        flat = np.ravel_multi_index(cols, cards)
        counts = np.bincount(flat, weights=w, minlength=math.prod(cards)).reshape(cards)
        counts = counts + smoothing
        totals = counts.sum(axis=-1, keepdims=True)
        with np.errstate(invalid="ignore", divide="ignore"):
            table = np.where(totals > 0, counts / np.where(totals > 0, totals, 1), 1.0 / cards[-1])
        cpts[node] = Cpt(node, parents, table)
    return BayesNet(dag, schema, cpts)


def _einsum(factors, out_names: Sequence[str], evidence: Mapping[str, int] | None = None) -> np.ndarray:
    """Sum-product over named factors, keeping ``out_names``; evidence slices axes first."""
    evidence = evidence or {}
    letters: dict[str, str] = {}
    arrays, subs = [], []
    for table, axes in factors:
        idx, kept = [], []
        for a in axes:
            if a in evidence:
                idx.append(evidence[a])
            else:
                idx.append(slice(None))
                kept.append(a)
        for a in kept:
            if a not in letters:
                if len(letters) >= len(_LETTERS):
                    raise CapacityError("too many free variables for einsum contraction")
                letters[a] = _LETTERS[len(letters)]
        arrays.append(table[tuple(idx)])
        subs.append("".join(letters[a] for a in kept))
    for n in out_names:
        if n not in letters:
            raise GraphError(f"output variable {n!r} does not appear in any factor")
    spec = ",".join(subs) + "->" + "".join(letters[n] for n in out_names)
    return np.einsum(spec, *arrays, optimize="greedy")


def marginal(bn: BayesNet, names: Sequence[str], evidence: Mapping[str, int] | None = None) -> np.ndarray:
    """Exact Pr(names, evidence) by variable elimination, axes in ``names`` order."""
    names = list(names)
    evidence = dict(evidence or {})
    factors = list(bn.factors())
    # ones vectors keep requested variables that are otherwise absent
    for n in names:
        factors.append((np.ones(bn.schema.attribute(n).cardinality), (n,)))
    return _einsum(factors, names, evidence)


def joint(bn: BayesNet, cap: int = DEFAULT_JOINT_CAP) -> JointDistribution:
    """Dense product of all CPTs over the full joint space."""
    if bn.n_cells() > cap:
        raise CapacityError(f"joint has {bn.n_cells()} cells, above the cap of {cap}; use query() instead")
    table = np.ones(bn.schema.cardinalities)
    names = bn.names
    for t, axes in bn.factors():
        perm = sorted(range(len(axes)), key=lambda i: names.index(axes[i]))
        arr = np.transpose(t, perm)
        shape = [1] * len(names)
        for i in perm:
            shape[names.index(axes[i])] = t.shape[i]
        table = table * arr.reshape(shape)
    return JointDistribution(names, table)


def query(bn: BayesNet, event: Assignment, given: Assignment | None = None) -> float:
    """Exact Pr(event | given)."""
    s = bn.schema
    ev, gv = s.resolve(event), s.resolve(given)
    for n in set(ev) & set(gv):
        if ev[n] != gv[n]:
            return 0.0
    both = {**gv, **ev}
    denom = float(marginal(bn, [], gv)) if gv else 1.0
    if denom <= 0.0:
        raise UndefinedProbabilityError(f"conditioning event {s.labels(gv)} has zero probability")
    return float(marginal(bn, [], both)) / denom


def replace_cpt(bn: BayesNet, node: str, cpt: Cpt) -> BayesNet:
    if cpt.node != node:
        raise SchemaError(f"CPT is for {cpt.node!r}, not {node!r}")
    cpts = dict(bn.cpts)
    cpts[node] = cpt
    return BayesNet(bn.dag, bn.schema, cpts)


def sample(bn: BayesNet, n: int, seed: int) -> Dataset:
    """Ancestral sampling in topological order; deterministic for a given seed.

    Parallel shards should use ``numpy.random.SeedSequence(seed).spawn(k)``.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    schema = bn.schema
    codes = np.zeros((n, len(schema.names)), dtype=np.int64)
    for node in bn.dag.topological_order():
        cpt = bn.cpts[node]
        if cpt.parent_order:
            pcols = [codes[:, schema.index(p)] for p in cpt.parent_order]
            flat = np.ravel_multi_index(pcols, cpt.table.shape[:-1])
            rows = cpt.table.reshape(-1, cpt.table.shape[-1])[flat]
        else:
            rows = np.broadcast_to(cpt.table, (n, cpt.table.shape[-1]))
        cum = np.cumsum(rows, axis=1)
        u = rng.random(n)[:, None]
        codes[:, schema.index(node)] = np.minimum((u >= cum).sum(axis=1), cpt.table.shape[-1] - 1)
    return Dataset(schema, codes)


def _largest_remainder(total: int, probs: np.ndarray) -> np.ndarray:
    exact = total * probs
    counts = np.floor(exact).astype(np.int64)
    short = total - int(counts.sum())
    if short > 0:
        # stable sort keeps ties in category order
        counts[np.argsort(-(exact - counts), kind="stable")[:short]] += 1
    return counts


def stratified_sample(bn: BayesNet, n: int, seed: int) -> Dataset:
    """Ancestral sampling with largest-remainder counts inside every parent configuration.

    Nodes are filled in topological order.  Rows sharing a parent
    configuration receive the node's values in proportions n_g * Pr(x | pa),
    rounded by largest remainder, assigned through a seeded permutation of the
    group.  Every conditional frequency is thus within 1/n_g of its CPT value,
    and the rows receiving a value are chosen independently of everything
    outside the parents.
    """
    if n < 1:
        raise ValueError("n must be at least 1")
    rng = np.random.default_rng(seed)
    schema = bn.schema
    codes = np.zeros((n, len(schema.names)), dtype=np.int64)
    for node in bn.dag.topological_order():
        cpt = bn.cpts[node]
        k = cpt.table.shape[-1]
        rows = cpt.table.reshape(-1, k)
        if cpt.parent_order:
            pcols = [codes[:, schema.index(p)] for p in cpt.parent_order]
            flat = np.ravel_multi_index(pcols, cpt.table.shape[:-1])
        else:
            flat = np.zeros(n, dtype=np.int64)
        order = np.argsort(flat, kind="stable")
        bounds = np.searchsorted(flat[order], np.arange(rows.shape[0] + 1))
        col = np.empty(n, dtype=np.int64)
        for g in range(rows.shape[0]):
            idx = order[bounds[g]:bounds[g + 1]]
            if idx.size == 0:
                continue
            counts = _largest_remainder(idx.size, rows[g])
            col[idx[rng.permutation(idx.size)]] = np.repeat(np.arange(k), counts)
        codes[:, schema.index(node)] = col
    return Dataset(schema, codes)


def bn_to_json(bn: BayesNet) -> dict:
    return {
        **bn.dag.to_json(),
        "schema": bn.schema.to_json(),
        "cpts": {n: {"parent_order": list(c.parent_order), "table": c.table.tolist()}
                 for n, c in bn.cpts.items()},
    }


def bn_from_json(obj: Mapping) -> BayesNet:
    dag = Dag.from_json(obj)
    schema = Schema.from_json(obj["schema"])
    cpts = {n: Cpt(n, tuple(c["parent_order"]), np.array(c["table"], dtype=float))
            for n, c in obj["cpts"].items()}
    return BayesNet(dag, schema, cpts)


def save_bn(bn: BayesNet, path: str | Path) -> None:
    Path(path).write_text(json.dumps(bn_to_json(bn), indent=1) + "\n", encoding="utf-8")


def load_bn(path: str | Path) -> BayesNet:
    with open(path, encoding="utf-8") as fh:
        return bn_from_json(json.load(fh))


def binary_schema(names: Sequence[str], protected: str, decision: str) -> Schema:
    """Schema with every attribute on domain ("0", "1"); c- = "0", e+ = "1"."""
    attrs = tuple(Attribute(n, ("0", "1")) for n in names)
    return Schema(attrs, protected, decision, positive_label="1", protected_label="0")
