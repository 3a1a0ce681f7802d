"""Directed acyclic graphs, d-separation and block sets."""

from __future__ import annotations

import json
import re
from collections import deque
from dataclasses import dataclass
from itertools import combinations
from pathlib import Path
from typing import Iterable

from .errors import GraphError, OracleTooLargeError


@dataclass(frozen=True, eq=False)
class Dag:
    """Immutable DAG. Equality is structural: same node set and arc set."""

    nodes: tuple[str, ...]
    arcs: frozenset[tuple[str, str]]

    def __init__(self, nodes: Iterable[str], arcs: Iterable[tuple[str, str]] = ()):
        nodes = tuple(nodes)
        arcs = frozenset((str(a), str(b)) for a, b in arcs)
        if len(set(nodes)) != len(nodes):
            raise GraphError("duplicate node names")
        known = set(nodes)
        for a, b in arcs:
            if a not in known or b not in known:
                raise GraphError(f"arc {a}->{b} references an undeclared node")
            if a == b:
                raise GraphError(f"self-loop on {a}")
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "arcs", arcs)
        parents = {n: set() for n in nodes}
        children = {n: set() for n in nodes}
        for a, b in arcs:
            parents[b].add(a)
            children[a].add(b)
        object.__setattr__(self, "_parents", {n: frozenset(p) for n, p in parents.items()})
        object.__setattr__(self, "_children", {n: frozenset(c) for n, c in children.items()})
        object.__setattr__(self, "_order", self._topological_order())

    def __eq__(self, other):
        if not isinstance(other, Dag):
            return NotImplemented
        return set(self.nodes) == set(other.nodes) and self.arcs == other.arcs

    def __hash__(self):
        return hash((frozenset(self.nodes), self.arcs))

    def __repr__(self):
        arcs = ", ".join(f"{a}->{b}" for a, b in sorted(self.arcs))
        return f"Dag(nodes={list(self.nodes)}, arcs=[{arcs}])"

    def _check(self, node: str) -> None:
        if node not in self._parents:
            raise GraphError(f"unknown node {node!r}")

    def _topological_order(self) -> tuple[str, ...]:
        # Kahn's algorithm; ties broken by declaration order
        rank = {n: i for i, n in enumerate(self.nodes)}
        indeg = {n: len(self._parents[n]) for n in self.nodes}
        ready = sorted((n for n in self.nodes if indeg[n] == 0), key=rank.get)
        order = []
        while ready:
            n = ready.pop(0)
            order.append(n)
            for c in sorted(self._children[n], key=rank.get):
                indeg[c] -= 1
                if indeg[c] == 0:
                    ready.append(c)
            ready.sort(key=rank.get)
        if len(order) != len(self.nodes):
            raise GraphError("graph contains a directed cycle")
        return tuple(order)

    def topological_order(self) -> tuple[str, ...]:
        return self._order

    def parents(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._parents[node]

    def children(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._children[node]

    def descendants(self, node: str) -> frozenset[str]:
        """Nodes reachable from ``node`` by a directed path, excluding ``node``."""
        self._check(node)
        return self._reach(node, self._children)

    def ancestors(self, node: str) -> frozenset[str]:
        self._check(node)
        return self._reach(node, self._parents)

    @staticmethod
    def _reach(start, step) -> frozenset[str]:
        seen, stack = set(), list(step[start])
        while stack:
            n = stack.pop()
            if n not in seen:
                seen.add(n)
                stack.extend(step[n])
        return frozenset(seen)

    def has_arc(self, a: str, b: str) -> bool:
        return (a, b) in self.arcs

    def delete_arc(self, a: str, b: str) -> Dag:
        if (a, b) not in self.arcs:
            raise GraphError(f"arc {a}->{b} is not in the graph")
        return Dag(self.nodes, self.arcs - {(a, b)})

    def add_arc(self, a: str, b: str) -> Dag:
        return Dag(self.nodes, self.arcs | {(a, b)})

    def to_json(self) -> dict:
        return {"nodes": list(self.nodes), "arcs": [list(a) for a in sorted(self.arcs)]}

    @classmethod
    def from_json(cls, obj) -> Dag:
        try:
            return cls(obj["nodes"], [tuple(a) for a in obj["arcs"]])
        except (KeyError, TypeError, ValueError) as exc:
            raise GraphError(f"malformed graph JSON: {exc}") from None


_DOT_ARC = re.compile(r'^\s*"?([\w.\-]+)"?\s*->\s*"?([\w.\-]+)"?\s*;?\s*$')
_DOT_NODE = re.compile(r'^\s*"?([\w.\-]+)"?\s*;?\s*$')


def parse_dot(text: str) -> Dag:
    """Read the restricted DOT subset: ``digraph name { a -> b; c; }``."""
    body = text.strip()
    m = re.match(r"^(strict\s+)?digraph\s*[\w\"]*\s*\{(.*)\}\s*$", body, re.S)
    if not m:
        raise GraphError("expected a 'digraph { ... }' block")
    nodes, arcs = [], []
    for raw in re.split(r"[;\n]", m.group(2)):
        line = raw.strip()
        if not line or line.startswith("//"):
            continue
        am = _DOT_ARC.match(line)
        if am:
            a, b = am.groups()
            for n in (a, b):
                if n not in nodes:
                    nodes.append(n)
            arcs.append((a, b))
            continue
        nm = _DOT_NODE.match(line)
        if nm and nm.group(1) not in ("graph", "node", "edge"):
            if nm.group(1) not in nodes:
                nodes.append(nm.group(1))
            continue
        raise GraphError(f"unsupported DOT statement: {line!r}")
    return Dag(nodes, arcs)


def to_dot(g: Dag) -> str:
    lines = ["digraph G {"] + [f"  {n};" for n in g.nodes]
    lines += [f"  {a} -> {b};" for a, b in sorted(g.arcs)]
    return "\n".join(lines + ["}"]) + "\n"


def load_graph(path: str | Path) -> Dag:
    path = Path(path)
    if not path.exists():
        raise GraphError(f"graph file not found: {path}")
    text = path.read_text(encoding="utf-8")
    if path.suffix.lower() in (".dot", ".gv"):
        return parse_dot(text)
    try:
        return Dag.from_json(json.loads(text))
    except json.JSONDecodeError as exc:
        raise GraphError(f"{path}: invalid JSON ({exc})") from None


def save_graph(g: Dag, path: str | Path) -> None:
    Path(path).write_text(json.dumps(g.to_json(), indent=2) + "\n", encoding="utf-8")


def _as_set(x) -> frozenset[str]:
    return frozenset([x]) if isinstance(x, str) else frozenset(x)


def d_separated(g: Dag, x, y, z: Iterable[str] = ()) -> bool:
    """True iff every path between ``x`` and ``y`` is blocked by ``z``.

    ``x`` and ``y`` may be single names or node sets.  Linear-time
    reachability ("Bayes ball") over (node, direction) states.
    """
    xs, ys, zs = _as_set(x), _as_set(y), frozenset(z)
    for n in xs | ys | zs:
        g._check(n)
    if (xs | ys) & zs:
        raise GraphError("conditioning set overlaps the separated nodes")
    if xs & ys:
        return False
    return not (reachable(g, xs, zs) & ys)


def reachable(g: Dag, sources: Iterable[str], z: frozenset[str]) -> set[str]:
    """Nodes d-connected to ``sources`` given ``z``."""
    # ancestors of z (inclusive): colliders in this set are open
    anc_z, stack = set(), list(z)
    while stack:
        n = stack.pop()
        if n not in anc_z:
            anc_z.add(n)
            stack.extend(g._parents[n])
    # "up": arrived from a child; "down": arrived from a parent
    todo = deque((s, "up") for s in sources)
    seen, found = set(), set()
    while todo:
        n, d = todo.popleft()
        if (n, d) in seen:
            continue
        seen.add((n, d))
        if n not in z:
            found.add(n)
        if d == "up" and n not in z:
            todo.extend((p, "up") for p in g._parents[n])
            todo.extend((c, "down") for c in g._children[n])
        elif d == "down":
            if n not in z:
                todo.extend((c, "down") for c in g._children[n])
            if n in anc_z:
                todo.extend((p, "up") for p in g._parents[n])
    return found


def is_block_set(g: Dag, c: str, e: str, b: Iterable[str]) -> bool:
    """Whether ``b`` separates ``c`` from ``e`` once arc c->e is removed, using no descendant of ``e``."""
    b = frozenset(b)
    if c in b or e in b:
        raise GraphError("a block set may not contain the protected or decision attribute")
    if b & g.descendants(e):
        return False
    return d_separated(g.delete_arc(c, e), c, e, b)


def enumerate_block_sets(g: Dag, c: str, e: str, max_nodes: int = 15) -> list[frozenset[str]]:
    """Every block set, by brute force over subsets of the eligible nodes.

    Exponential on purpose; ordered by size, then by declaration order.
    """
    if not g.has_arc(c, e):
        raise GraphError(f"arc {c}->{e} is not in the graph")
    excluded = {c, e} | g.descendants(e)
    candidates = [n for n in g.nodes if n not in excluded]
    if len(candidates) > max_nodes:
        raise OracleTooLargeError(
            f"oracle too large: {len(candidates)} candidate nodes exceeds max_nodes={max_nodes}")
    g_cut = g.delete_arc(c, e)
    found = []
    for k in range(len(candidates) + 1):
        for subset in combinations(candidates, k):
            if d_separated(g_cut, c, e, subset):
                found.append(frozenset(subset))
    return found


@dataclass(frozen=True)
class TopoSplit:
    """Topological order shaped as prefix, C, middle, Q, E, suffix."""

    x: tuple[str, ...]
    c: str
    y: tuple[str, ...]
    q: tuple[str, ...]
    e: str
    z: tuple[str, ...]

    @property
    def order(self) -> tuple[str, ...]:
        return self.x + (self.c,) + self.y + self.q + (self.e,) + self.z


def topo_split(g: Dag, c: str, e: str) -> TopoSplit:
    """Order the nodes as X, C, Y, Q, E, Z with Q = Par(E) minus C and Z = descendants of E.

    Not every DAG admits this shape: a Q member that is an ancestor of C, or
    a non-parent node forced between two Q members or between Q and E,
    makes it impossible; ``GraphError`` is raised in that case.
    """
    if not g.has_arc(c, e):
        raise GraphError(f"arc {c}->{e} is not in the graph")
    q = frozenset(g.parents(e) - {c})
    z = g.descendants(e)
    rest = [n for n in g.nodes if n != e and n not in z and n not in q]
    anc_c = g.ancestors(c)
    if q & anc_c:
        raise GraphError(f"no X,C,Y,Q,E,Z ordering: {sorted(q & anc_c)} precede {c}")
    forced = [n for n in rest if n != c and any(n in g.descendants(m) for m in q)]
    if forced:
        raise GraphError(f"no X,C,Y,Q,E,Z ordering: {sorted(forced)} must follow a member of Q")
    order = g.topological_order()
    x = tuple(n for n in order if n in anc_c)
    y = tuple(n for n in order if n in rest and n != c and n not in anc_c)
    qs = tuple(n for n in order if n in q)
    zs = tuple(n for n in order if n in z)
    split = TopoSplit(x, c, y, qs, e, zs)
    pos = {n: i for i, n in enumerate(split.order)}
    assert all(pos[a] < pos[b] for a, b in g.arcs), "topo_split produced an invalid order"
    return split
