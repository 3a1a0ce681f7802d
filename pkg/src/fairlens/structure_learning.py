"""PC structure learning with temporal tiers, and the Q-set lookup."""

from __future__ import annotations

import json
import logging
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from scipy.special import xlogy
from scipy.stats import chi2

from .tabular_data import Dataset, Schema
from .errors import FairlensError, GraphError
from .causal_graph import Dag

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TierSpec:
    """Ordered, disjoint attribute sets; arcs may never point into an earlier tier."""

    tiers: tuple[frozenset[str], ...]

    def __init__(self, tiers: Iterable[Iterable[str]] = ()):
        tiers = tuple(frozenset(t) for t in tiers)
        seen = set()
        for t in tiers:
            if seen & t:
                raise FairlensError(f"tiers overlap on {sorted(seen & t)}")
            seen |= t
        object.__setattr__(self, "tiers", tiers)

    def tier_of(self, name: str) -> int:
        """Index of the tier holding ``name``; unlisted attributes fall in the last tier."""
        for i, t in enumerate(self.tiers):
            if name in t:
                return i
        return max(len(self.tiers) - 1, 0)

    def validate(self, names: Iterable[str]) -> None:
        unknown = set().union(*self.tiers) - set(names) if self.tiers else set()
        if unknown:
            raise FairlensError(f"tiers mention unknown attributes {sorted(unknown)}")

    def violations(self, g: Dag) -> list[tuple[str, str]]:
        return sorted((a, b) for a, b in g.arcs if self.tier_of(a) > self.tier_of(b))

    @classmethod
    def from_json(cls, obj) -> TierSpec:
        return cls(obj["tiers"])

    def to_json(self) -> dict:
        return {"tiers": [sorted(t) for t in self.tiers]}


def load_tiers(path: str | Path) -> TierSpec:
    with open(path, encoding="utf-8") as fh:
        return TierSpec.from_json(json.load(fh))


@dataclass(frozen=True)
class CiTestResult:
    statistic: float
    degrees_of_freedom: int
    p_value: float
    independent: bool


def _strata_tables(dataset: Dataset, x: str, y: str, z: Sequence[str]) -> np.ndarray:
    """Observed counts with shape (n_nonempty_strata, |x|, |y|)."""
    s = dataset.schema
    kx, ky = s.attribute(x).cardinality, s.attribute(y).cardinality
    xy = dataset.column(x) * ky + dataset.column(y)
    w = dataset.row_weights()
    if z:
        zcols = np.stack([dataset.column(n) for n in z], axis=1)
        _, inverse = np.unique(zcols, axis=0, return_inverse=True)
        inverse = inverse.reshape(-1)
        n_strata = int(inverse.max()) + 1
    else:
        inverse = np.zeros(dataset.n_rows, dtype=np.int64)
        n_strata = 1
    counts = np.bincount(inverse * (kx * ky) + xy, weights=w, minlength=n_strata * kx * ky)
    return counts.reshape(n_strata, kx, ky)


def g2_test(dataset: Dataset, x: str, y: str, z: Iterable[str] = (), alpha: float = 0.01,
            method: str = "g2") -> CiTestResult:
    """Conditional independence test of x and y given z on stratified counts.

    ``method`` is ``"g2"`` (likelihood ratio) or ``"pearson"``.  Degrees of
    freedom are (|x|-1)(|y|-1) per non-empty stratum.
    """
    z = list(z)
    if x == y or x in z or y in z:
        raise FairlensError("x, y and the conditioning set must be disjoint")
    obs = _strata_tables(dataset, x, y, z)
    totals = obs.sum(axis=(1, 2))
    obs = obs[totals > 0]
    if len(obs) == 0:
        raise FairlensError("no non-empty stratum to test")
    n = obs.sum(axis=(1, 2), keepdims=True)
    expected = obs.sum(axis=2, keepdims=True) * obs.sum(axis=1, keepdims=True) / n
    if method == "g2":
        stat = 2.0 * float(np.sum(xlogy(obs, obs) - xlogy(obs, np.where(obs > 0, expected, 1.0))))
    elif method == "pearson":
        with np.errstate(invalid="ignore", divide="ignore"):
            terms = np.where(expected > 0, (obs - expected) ** 2 / np.where(expected > 0, expected, 1), 0.0)
        stat = float(terms.sum())
    else:
        raise FairlensError(f"unknown CI test {method!r}")
    stat = max(stat, 0.0)
    kx, ky = obs.shape[1], obs.shape[2]
    df = len(obs) * (kx - 1) * (ky - 1)
    p = float(chi2.sf(stat, df)) if df > 0 else 1.0
    return CiTestResult(stat, df, p, p > alpha)


@dataclass
class LearnLog:
    ci_tests: int = 0
    removed: list = field(default_factory=list)
    v_structures: list = field(default_factory=list)
    tier_oriented: list = field(default_factory=list)
    meek_oriented: list = field(default_factory=list)
    default_oriented: list = field(default_factory=list)
    skipped_conflicts: list = field(default_factory=list)

    def to_json(self) -> dict:
        return {
            "ci_tests": self.ci_tests,
            "removed_edges": [{"edge": list(e), "sepset": list(s)} for e, s in self.removed],
            "v_structures": [list(t) for t in self.v_structures],
            "tier_oriented": [list(a) for a in self.tier_oriented],
            "meek_oriented": [list(a) for a in self.meek_oriented],
            "default_oriented": [list(a) for a in self.default_oriented],
            "skipped_conflicts": [list(a) for a in self.skipped_conflicts],
        }


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("FAIRLENS_THREADS", "1")))
    except ValueError:
        return 1


class _PartialGraph:
    """Skeleton plus a set of directed marks; an edge is undirected until marked."""

    def __init__(self, nodes: Sequence[str], adj: dict[str, set[str]]):
        self.nodes = list(nodes)
        self.rank = {n: i for i, n in enumerate(nodes)}
        self.adj = adj
        self.directed: set[tuple[str, str]] = set()

    def undirected(self, a, b) -> bool:
        return b in self.adj[a] and (a, b) not in self.directed and (b, a) not in self.directed

    def creates_cycle(self, a, b) -> bool:
        # a->b closes a cycle iff b already reaches a along directed marks
        stack, seen = [b], set()
        while stack:
            n = stack.pop()
            if n == a:
                return True
            if n in seen:
                continue
            seen.add(n)
            stack.extend(m for (u, m) in self.directed if u == n)
        return False

    def orient(self, a, b) -> bool:
        if not self.undirected(a, b) or self.creates_cycle(a, b):
            return False
        self.directed.add((a, b))
        return True

    def edges(self):
        for a in self.nodes:
            for b in sorted(self.adj[a], key=self.rank.get):
                if self.rank[a] < self.rank[b]:
                    yield a, b


def _skeleton(dataset: Dataset, nodes: list[str], alpha: float, max_depth: int | None,
              method: str, log_: LearnLog):
    adj = {n: {m for m in nodes if m != n} for n in nodes}
    sepsets: dict[frozenset, tuple[str, ...]] = {}
    rank = {n: i for i, n in enumerate(nodes)}
    depth = 0
    pool = ThreadPoolExecutor(_threads()) if _threads() > 1 else None
    try:
        while max_depth is None or depth <= max_depth:
            if not any(len(adj[a]) - 1 >= depth for a in nodes):
                break
            for a in nodes:
                for b in sorted(adj[a], key=rank.get):
                    if b not in adj[a] or len(adj[a]) - 1 < depth:
                        continue
                    others = sorted(adj[a] - {b}, key=rank.get)
                    subsets = list(combinations(others, depth))
                    if not subsets:
                        continue
                    run = lambda s: g2_test(dataset, a, b, s, alpha, method)  # noqa: E731
                    results = list(pool.map(run, subsets)) if pool else None
                    for i, subset in enumerate(subsets):
                        res = results[i] if results is not None else run(subset)
                        log_.ci_tests += 1
                        if res.independent:
                            adj[a].discard(b)
                            adj[b].discard(a)
                            sepsets[frozenset((a, b))] = subset
                            log_.removed.append(((a, b), subset))
                            break
            depth += 1
    finally:
        if pool:
            pool.shutdown()
    return adj, sepsets


def _meek(pg: _PartialGraph, log_: LearnLog) -> None:
    changed = True
    while changed:
        changed = False
        for a, b in list(pg.edges()):
            for x, y in ((a, b), (b, a)):
                if not pg.undirected(x, y):
                    continue
                # R1: w->x, x-y, w and y non-adjacent  =>  x->y
                r1 = any((w, x) in pg.directed and y not in pg.adj[w] and w != y for w in pg.adj[x])
                # R2: x->w->y and x-y  =>  x->y
                r2 = any((x, w) in pg.directed and (w, y) in pg.directed for w in pg.adj[x])
                # R3: x-w1->y, x-w2->y, w1,w2 non-adjacent  =>  x->y
                ws = [w for w in pg.adj[x] if pg.undirected(x, w) and (w, y) in pg.directed]
                r3 = any(w2 not in pg.adj[w1] for w1, w2 in combinations(ws, 2))
                if (r1 or r2 or r3) and pg.orient(x, y):
                    log_.meek_oriented.append((x, y))
                    changed = True
                    break


def pc_learn(dataset: Dataset, tiers: TierSpec | None = None, alpha: float = 0.01,
             max_depth: int | None = None, method: str = "g2",
             return_log: bool = False):
    """Learn a DAG with the PC algorithm.

    Cross-tier edges are fixed earlier -> later before any other orientation;
    v-structures and Meek rules never override them.  Edges still undirected
    at the end are oriented by attribute declaration order, reversed only
    when that would close a cycle.
    """
    if not 0 < alpha < 1:
        raise FairlensError("alpha must lie in (0, 1)")
    nodes = list(dataset.schema.names)
    if len(nodes) < 2:
        raise FairlensError("structure learning needs at least two attributes")
    tiers = tiers or TierSpec()
    tiers.validate(nodes)
    log_ = LearnLog()
    adj, sepsets = _skeleton(dataset, nodes, alpha, max_depth, method, log_)
    pg = _PartialGraph(nodes, adj)

    for a, b in list(pg.edges()):
        ta, tb = tiers.tier_of(a), tiers.tier_of(b)
        if ta != tb:
            src, dst = (a, b) if ta < tb else (b, a)
            pg.orient(src, dst)
            log_.tier_oriented.append((src, dst))

    rank = pg.rank
    for m in nodes:
        nbrs = sorted(adj[m], key=rank.get)
        for x, y in combinations(nbrs, 2):
            if y in adj[x]:
                continue
            if m in sepsets.get(frozenset((x, y)), ()):
                continue
            for src in (x, y):
                if (m, src) in pg.directed:
                    log_.skipped_conflicts.append((src, m))
                elif pg.undirected(src, m) and not pg.orient(src, m):
                    log_.skipped_conflicts.append((src, m))
            log_.v_structures.append((x, m, y))

    _meek(pg, log_)

    for a, b in list(pg.edges()):
        if pg.undirected(a, b):
            if not pg.orient(a, b):
                pg.orient(b, a)
                log_.default_oriented.append((b, a))
            else:
                log_.default_oriented.append((a, b))
    g = Dag(nodes, pg.directed)
    bad = tiers.violations(g)
    if bad:
        raise GraphError(f"internal error: tier constraints violated by {bad}")
    log.info("PC finished: %d CI tests, %d arcs", log_.ci_tests, len(g.arcs))
    return (g, log_) if return_log else g


def find_q(g: Dag, schema: Schema, strict: bool = False) -> tuple[str, ...]:
    """Parents of the decision other than the protected attribute, in graph declaration order."""
    e, c = schema.decision, schema.protected
    if e not in g.nodes:
        raise GraphError(f"decision attribute {e!r} is absent from the graph")
    parents = g.parents(e)
    if c not in parents:
        msg = f"arc {c}->{e} is absent: the graph encodes no direct effect of {c} on {e}"
        if strict:
            raise GraphError(msg)
        warnings.warn(msg, stacklevel=2)
    return tuple(n for n in g.nodes if n in parents and n != c)
