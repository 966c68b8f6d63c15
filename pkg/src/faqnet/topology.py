"""Communication graphs: terminal min-cut, Steiner tree packing, flow scheduling."""

from __future__ import annotations

import itertools
import logging
import math
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import networkx as nx

from .errors import IncompatibleInputError, ParseError, SchemaError

log = logging.getLogger(__name__)

Edge = tuple[str, str]


def edge_key(a: str, b: str) -> Edge:
    return (a, b) if a <= b else (b, a)


@dataclass(frozen=True)
class Topology:
    """Undirected graph with a terminal set and a per-edge, per-direction bit budget.

    ``capacity_bits`` may be None, meaning the budget is derived from the
    query (ceil(r * log2 Dmax)) when a protocol runs.
    """

    nodes: tuple[str, ...]
    edges: tuple[Edge, ...]
    terminals: tuple[str, ...]
    capacity_bits: int | None = None
    _adj: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        nodes = tuple(self.nodes)
        if len(set(nodes)) != len(nodes):
            raise SchemaError("duplicate node name")
        seen = set()
        edges = []
        for a, b in self.edges:
            if a == b:
                raise SchemaError(f"self-loop on {a}")
            for x in (a, b):
                if x not in nodes:
                    raise SchemaError(f"edge endpoint {x} is not a node")
            k = edge_key(a, b)
            if k in seen:
                raise SchemaError(f"duplicate edge {a}-{b}")
            seen.add(k)
            edges.append(k)
        object.__setattr__(self, "nodes", nodes)
        object.__setattr__(self, "edges", tuple(edges))
        object.__setattr__(self, "terminals", tuple(self.terminals))
        if not self.terminals:
            raise SchemaError("terminal set is empty")
        for k in self.terminals:
            if k not in nodes:
                raise SchemaError(f"terminal {k} is not a node")
        if self.capacity_bits is not None and self.capacity_bits < 1:
            raise SchemaError("capacity must be positive")
        adj: dict[str, list[str]] = {n: [] for n in nodes}
        for a, b in edges:
            adj[a].append(b)
            adj[b].append(a)
        for n in adj:
            adj[n].sort(key=nodes.index)
        object.__setattr__(self, "_adj", adj)
        if len(nodes) > 1 and len(_reach(adj, nodes[0], set(self.edges))) != len(nodes):
            raise SchemaError("topology is not connected")

    def neighbours(self, n: str) -> list[str]:
        return self._adj[n]

    def with_capacity(self, bits: int | None) -> "Topology":
        return Topology(self.nodes, self.edges, self.terminals, bits)

    def with_terminals(self, terminals: Sequence[str]) -> "Topology":
        return Topology(self.nodes, self.edges, tuple(terminals), self.capacity_bits)

    def relabel(self, mapping: Mapping[str, str]) -> "Topology":
        return Topology(tuple(mapping[n] for n in self.nodes),
                        tuple((mapping[a], mapping[b]) for a, b in self.edges),
                        tuple(mapping[k] for k in self.terminals), self.capacity_bits)

    def distances(self, src: str) -> dict[str, int]:
        dist = {src: 0}
        q = deque([src])
        while q:
            x = q.popleft()
            for y in self._adj[x]:
                if y not in dist:
                    dist[y] = dist[x] + 1
                    q.append(y)
        return dist

    def is_path(self) -> bool:
        if len(self.nodes) == 1:
            return True
        degs = [len(self._adj[n]) for n in self.nodes]
        return len(self.edges) == len(self.nodes) - 1 and max(degs) <= 2

    def path_order(self) -> list[str]:
        if not self.is_path():
            raise IncompatibleInputError("topology is not a path")
        if len(self.nodes) == 1:
            return list(self.nodes)
        start = next(n for n in self.nodes if len(self._adj[n]) == 1)
        order = [start]
        while len(order) < len(self.nodes):
            order.append(next(y for y in self._adj[order[-1]] if y not in order))
        return order

    def key(self) -> tuple:
        return (self.nodes, self.edges, self.terminals)


def _reach(adj, src, allowed: set) -> set:
    seen = {src}
    stack = [src]
    while stack:
        x = stack.pop()
        for y in adj[x]:
            if y not in seen and edge_key(x, y) in allowed:
                seen.add(y)
                stack.append(y)
    return seen


@dataclass(frozen=True)
class Assignment:
    """Which player holds each hyperedge's relation, and who must learn the answer."""

    placement: Mapping[str, str]
    answer_player: str

    def __post_init__(self):
        object.__setattr__(self, "placement", dict(self.placement))

    def players(self) -> tuple[str, ...]:
        out = []
        for p in list(self.placement.values()) + [self.answer_player]:
            if p not in out:
                out.append(p)
        return tuple(out)

    def check(self, edge_ids: Iterable[str], t: Topology) -> None:
        edge_ids = list(edge_ids)
        missing = [e for e in edge_ids if e not in self.placement]
        if missing:
            raise SchemaError(f"relations {missing} are not assigned")
        for e, p in self.placement.items():
            if p not in t.terminals:
                raise SchemaError(f"relation {e} assigned to non-terminal {p}")
        if self.answer_player not in t.terminals:
            raise SchemaError(f"answer player {self.answer_player} is not a terminal")

    def relabel(self, mapping: Mapping[str, str]) -> "Assignment":
        return Assignment({e: mapping[p] for e, p in self.placement.items()}, mapping[self.answer_player])


def round_robin_assignment(edge_ids: Sequence[str], t: Topology) -> Assignment:
    return Assignment({e: t.terminals[i % len(t.terminals)] for i, e in enumerate(edge_ids)},
                      t.terminals[0])


def parse_assignment(text: str, source: str | None = None) -> Assignment:
    """Parse ``<edge> <player>`` lines plus one ``answer <player>`` line."""
    placement: dict[str, str] = {}
    answer = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        toks = line.split()
        if len(toks) != 2:
            raise ParseError("expected two fields", line=lineno, column=raw.index(toks[0]) + 1, source=source)
        if toks[0] == "answer":
            answer = toks[1]
        elif toks[0] in placement:
            raise ParseError(f"relation {toks[0]} assigned twice", line=lineno, column=1, source=source)
        else:
            placement[toks[0]] = toks[1]
    if answer is None:
        raise ParseError("missing 'answer' line", source=source)
    return Assignment(placement, answer)


def format_assignment(a: Assignment) -> str:
    lines = [f"{e} {p}" for e, p in a.placement.items()]
    lines.append(f"answer {a.answer_player}")
    return "\n".join(lines) + "\n"


def read_assignment(path: str | Path) -> Assignment:
    path = Path(path)
    return parse_assignment(path.read_text(encoding="utf-8"), source=str(path))


# --------------------------------------------------------------------------- min cut


def _nx_graph(t: Topology) -> nx.DiGraph:
    g = nx.DiGraph()
    g.add_nodes_from(t.nodes)
    for a, b in t.edges:
        g.add_edge(a, b, capacity=1)
        g.add_edge(b, a, capacity=1)
    return g


@dataclass(frozen=True)
class Cut:
    value: int
    side_a: tuple[str, ...]
    side_b: tuple[str, ...]


def _cut_size(t: Topology, side: set) -> int:
    return sum(1 for a, b in t.edges if (a in side) != (b in side))


def min_cut(t: Topology) -> Cut:
    """Fewest edges separating the terminals into two nonempty groups.

    The value is the minimum over terminals b of maxflow(k0, b) with unit
    capacities.  Among optimal cuts found from either end of each flow, the
    witness keeps the terminals most evenly split, then the lexicographically
    smallest side holding k0.
    """
    if len(t.terminals) < 2:
        raise IncompatibleInputError("min cut needs at least two terminals")
    return _min_cut_cached(t.key())


@lru_cache(maxsize=512)
def _min_cut_cached(key: tuple) -> Cut:
    t = Topology(*key)
    g = _nx_graph(t)
    k0 = t.terminals[0]
    flows = {b: nx.maximum_flow_value(g, k0, b) for b in t.terminals[1:]}
    best = min(flows.values())
    order = {n: i for i, n in enumerate(t.nodes)}
    candidates = []
    for b, f in flows.items():
        if f != best:
            continue
        residual = nx.algorithms.flow.edmonds_karp(g, k0, b)

        def open_arc(u, v):
            r = residual[u][v]
            return r["capacity"] - r["flow"] > 0

        fwd = _residual_reach(residual, k0, lambda x: residual.successors(x), lambda x, y: open_arc(x, y))
        back = _residual_reach(residual, b, lambda x: residual.predecessors(x), lambda x, y: open_arc(y, x))
        for side in (fwd, set(t.nodes) - back):
            if _cut_size(t, side) == best:
                candidates.append(side)
    kset = set(t.terminals)

    def rank(side):
        ka = len(side & kset)
        return (abs(len(kset) - 2 * ka), sorted(order[n] for n in side))

    side = min(candidates, key=rank)
    a = tuple(n for n in t.nodes if n in side)
    b = tuple(n for n in t.nodes if n not in side)
    return Cut(best, a, b)


def _residual_reach(residual, start, step, usable) -> set:
    seen = {start}
    stack = [start]
    while stack:
        x = stack.pop()
        for y in step(x):
            if y not in seen and usable(x, y):
                seen.add(y)
                stack.append(y)
    return seen


def min_cut_bruteforce(t: Topology) -> int:
    """Minimum over every node 2-partition that splits the terminals."""
    nodes = list(t.nodes)
    kset = set(t.terminals)
    best = None
    for mask in range(1, 2 ** (len(nodes) - 1)):
        side = {nodes[i + 1] for i in range(len(nodes) - 1) if mask >> i & 1}
        if not (side & kset) or not (kset - side):
            continue
        c = _cut_size(t, side)
        best = c if best is None else min(best, c)
    return best


# --------------------------------------------------------------------------- Steiner trees


@dataclass(frozen=True)
class SteinerPacking:
    trees: tuple[frozenset[Edge], ...]
    delta: int
    exact: bool

    @property
    def count(self) -> int:
        return len(self.trees)


def terminal_diameter(t: Topology, tree: Iterable[Edge]) -> int:
    """Largest distance inside ``tree`` between two terminals."""
    tree = set(tree)
    if len(t.terminals) <= 1:
        return 0
    adj: dict[str, list[str]] = {}
    for a, b in tree:
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    worst = 0
    for k in t.terminals:
        dist = {k: 0}
        q = deque([k])
        while q:
            x = q.popleft()
            for y in adj.get(x, ()):
                if y not in dist:
                    dist[y] = dist[x] + 1
                    q.append(y)
        for k2 in t.terminals:
            if k2 not in dist:
                return math.inf
            worst = max(worst, dist[k2])
    return worst


def is_steiner_tree(t: Topology, tree: Iterable[Edge]) -> bool:
    tree = set(tree)
    if len(t.terminals) == 1:
        return True
    nodes = {x for e in tree for x in e}
    if not set(t.terminals) <= nodes or len(tree) != len(nodes) - 1:
        return False
    adj = {n: [] for n in nodes}
    for a, b in tree:
        adj[a].append(b)
        adj[b].append(a)
    return len(_reach(adj, t.terminals[0], tree)) == len(nodes)


def validate_packing(t: Topology, p: SteinerPacking) -> list[str]:
    problems = []
    used: set[Edge] = set()
    for i, tree in enumerate(p.trees):
        if not set(tree) <= set(t.edges):
            problems.append(f"tree {i} uses a non-edge")
        if not is_steiner_tree(t, tree):
            problems.append(f"tree {i} does not connect the terminals as a tree")
        elif terminal_diameter(t, tree) > p.delta:
            problems.append(f"tree {i} exceeds terminal diameter {p.delta}")
        if used & set(tree):
            problems.append(f"tree {i} shares edges with an earlier tree")
        used |= set(tree)
    return problems


def _prune(tree: set[Edge], terminals: set[str]) -> set[Edge]:
    tree = set(tree)
    while True:
        deg: dict[str, int] = {}
        for a, b in tree:
            deg[a] = deg.get(a, 0) + 1
            deg[b] = deg.get(b, 0) + 1
        drop = {e for e in tree if any(deg[x] == 1 and x not in terminals for x in e)}
        if not drop:
            return tree
        tree -= drop


def _greedy_packing(t: Topology, delta: int) -> list[frozenset[Edge]]:
    terminals = set(t.terminals)
    left = set(t.edges)
    trees = []
    while True:
        best = None
        for root in t.nodes:
            parent = {root: None}
            q = deque([root])
            while q:
                x = q.popleft()
                for y in t.neighbours(x):
                    if y not in parent and edge_key(x, y) in left:
                        parent[y] = x
                        q.append(y)
            if not terminals <= set(parent):
                continue
            tree = _prune({edge_key(n, p) for n, p in parent.items() if p is not None}, terminals)
            diam = terminal_diameter(t, tree)
            if diam > delta:
                continue
            score = (diam, len(tree))
            if best is None or score < best[0]:
                best = (score, tree)
        if best is None:
            return trees
        trees.append(frozenset(best[1]))
        left -= best[1]


@lru_cache(maxsize=256)
def _all_steiner_trees(key: tuple) -> tuple[tuple[int, int], ...]:
    """Every minimal Steiner tree as (edge bitmask, terminal diameter)."""
    nodes, edges, terminals = key
    t = Topology(nodes, edges, terminals)
    kset = set(terminals)
    others = [n for n in nodes if n not in kset]
    index = {e: i for i, e in enumerate(edges)}
    found = []
    for r in range(len(others) + 1):
        for extra in itertools.combinations(others, r):
            span = kset | set(extra)
            sub = [e for e in edges if e[0] in span and e[1] in span]
            need = len(span) - 1
            if len(sub) < need:
                continue
            for tree in _spanning_trees(sorted(span), sub, need):
                deg: dict[str, int] = {}
                for a, b in tree:
                    deg[a] = deg.get(a, 0) + 1
                    deg[b] = deg.get(b, 0) + 1
                if any(deg.get(n, 0) <= 1 for n in extra):
                    continue
                mask = 0
                for e in tree:
                    mask |= 1 << index[e]
                found.append((mask, terminal_diameter(t, tree)))
    return tuple(found)


def _spanning_trees(nodes: list[str], edges: list[Edge], need: int):
    parent_of = {n: n for n in nodes}

    def find(uf, x):
        while uf[x] != x:
            x = uf[x]
        return x

    def rec(i, chosen, uf):
        if len(chosen) == need:
            yield list(chosen)
            return
        if len(edges) - i < need - len(chosen):
            return
        a, b = edges[i]
        ra, rb = find(uf, a), find(uf, b)
        if ra != rb:
            uf2 = dict(uf)
            uf2[ra] = rb
            chosen.append(edges[i])
            yield from rec(i + 1, chosen, uf2)
            chosen.pop()
        yield from rec(i + 1, chosen, uf)

    if need == 0:
        yield []
        return
    yield from rec(0, [], parent_of)


def _max_disjoint(masks: list[int]) -> list[int]:
    masks = sorted(set(masks), key=lambda m: (bin(m).count("1"), m))
    best: list[int] = []
    min_size = min((bin(m).count("1") for m in masks), default=1)

    def rec(start, used, chosen, free_bits):
        nonlocal best
        if len(chosen) > len(best):
            best = list(chosen)
        if len(chosen) + free_bits // max(min_size, 1) <= len(best):
            return
        for i in range(start, len(masks)):
            m = masks[i]
            if m & used:
                continue
            chosen.append(m)
            rec(i + 1, used | m, chosen, free_bits - bin(m).count("1"))
            chosen.pop()

    total = 0
    for m in masks:
        total |= m
    rec(0, 0, [], bin(total).count("1"))
    return best


EXACT_EDGE_LIMIT = 16


def steiner_packing(t: Topology, delta: int, exact: bool | None = None) -> SteinerPacking:
    """Edge-disjoint Steiner trees whose terminal diameter is at most ``delta``.

    Exact (exhaustive tree enumeration plus branch and bound) when the graph
    has at most 16 edges, greedy BFS extraction otherwise.
    """
    if delta < 1 and len(t.terminals) > 1:
        raise IncompatibleInputError("delta must be at least 1")
    if len(t.terminals) == 1:
        return SteinerPacking((frozenset(),), delta, True)
    if exact is None:
        exact = len(t.edges) <= EXACT_EDGE_LIMIT
    if not exact:
        return SteinerPacking(tuple(_greedy_packing(t, delta)), delta, False)
    trees = [m for m, d in _all_steiner_trees(t.key()) if d <= delta]
    chosen = _max_disjoint(trees)
    edges = t.edges
    chosen.sort(key=lambda m: [i for i in range(len(edges)) if m >> i & 1])
    out = tuple(frozenset(edges[i] for i in range(len(edges)) if m >> i & 1) for m in chosen)
    return SteinerPacking(out, delta, True)


@lru_cache(maxsize=1024)
def _packing_cached(key: tuple, delta: int) -> SteinerPacking:
    nodes, edges, terminals = key
    return steiner_packing(Topology(nodes, edges, terminals), delta)


def packing_for(t: Topology, delta: int) -> SteinerPacking:
    return _packing_cached(t.key(), delta)


def st_table(t: Topology) -> dict[int, int]:
    """Packing size for every delta in 1..|V|."""
    return {d: packing_for(t, d).count for d in range(1, len(t.nodes) + 1)}


def best_delta(t: Topology, n_items: int) -> tuple[int, int]:
    """Delta minimising ceil(n_items / ST) + delta; the smallest delta wins ties."""
    if len(t.terminals) == 1:
        return 0, 0
    best = None
    for d in range(1, len(t.nodes) + 1):
        st = packing_for(t, d).count
        if st == 0:
            continue
        est = math.ceil(n_items / st) + d
        if best is None or est < best[1]:
            best = (d, est)
    if best is None:
        raise IncompatibleInputError("no Steiner tree connects the terminals")
    return best


# --------------------------------------------------------------------------- flow schedule


@dataclass(frozen=True)
class McfSchedule:
    rounds: int
    floor: int


def mcf_schedule(t: Topology, demands: Sequence[tuple[str, int]], sink: str,
                 capacity_bits: int | None = None) -> McfSchedule:
    """Greedy store-and-forward routing of bit volumes to ``sink``.

    Every round each node pushes up to B bits over each edge that leads one
    step closer to the sink, filling the emptiest neighbour first.  Bits that
    arrive in a round can move on in the next one.  ``floor`` is
    max(ceil(bits / (B * mincut)), farthest source distance).
    """
    B = capacity_bits or t.capacity_bits
    if not B:
        raise SchemaError("no capacity given")
    dist = t.distances(sink)
    held = {n: 0 for n in t.nodes}
    for src, bits in demands:
        held[src] += int(bits)
    total = sum(v for n, v in held.items() if n != sink)
    far = max((dist[s] for s, b in demands if b > 0 and s != sink), default=0)
    cut = min_cut(t).value if len(t.terminals) > 1 else 1
    floor = max(math.ceil(total / (B * max(cut, 1))), far) if total else 0
    rounds = 0
    down = {n: [y for y in t.neighbours(n) if dist[y] == dist[n] - 1] for n in t.nodes}
    while any(v for n, v in held.items() if n != sink):
        rounds += 1
        incoming = {n: 0 for n in t.nodes}
        for n in sorted(t.nodes, key=lambda x: dist[x]):
            if n == sink or not held[n]:
                continue
            for y in sorted(down[n], key=lambda y: (held[y] + incoming[y], t.nodes.index(y))):
                move = min(B, held[n])
                held[n] -= move
                incoming[y] += move
                if not held[n]:
                    break
        for n, v in incoming.items():
            held[n] += v
    return McfSchedule(rounds, floor)


# --------------------------------------------------------------------------- text format


def parse_topo(text: str, source: str | None = None) -> Topology:
    """Parse node names, a ``terminals`` line, ``edge a b`` lines and optional ``capacity n``."""
    nodes: list[str] | None = None
    terminals: list[str] | None = None
    edges: list[Edge] = []
    cap = None
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        toks = line.split()
        col = raw.index(toks[0]) + 1
        if nodes is None:
            if toks[0] in ("terminals", "edge", "capacity"):
                raise ParseError("first line must list the node names", line=lineno, column=col,
                                 source=source)
            nodes = toks
            continue
        if toks[0] == "terminals":
            if terminals is not None:
                raise ParseError("second 'terminals' line", line=lineno, column=col, source=source)
            terminals = toks[1:]
            for k in terminals:
                if k not in nodes:
                    raise ParseError(f"unknown terminal {k}", line=lineno, column=raw.index(k) + 1,
                                     source=source)
        elif toks[0] == "edge":
            if len(toks) != 3:
                raise ParseError("edge needs exactly two endpoints", line=lineno, column=col, source=source)
            for x in toks[1:]:
                if x not in nodes:
                    raise ParseError(f"unknown node {x}", line=lineno, column=raw.index(x) + 1,
                                     source=source)
            edges.append((toks[1], toks[2]))
        elif toks[0] == "capacity":
            try:
                cap = int(toks[1])
            except (IndexError, ValueError):
                raise ParseError("capacity needs an integer", line=lineno, column=col, source=source) from None
        else:
            raise ParseError(f"unknown directive {toks[0]!r}", line=lineno, column=col, source=source)
    if nodes is None:
        raise ParseError("empty topology file", line=1, column=1, source=source)
    if terminals is None:
        raise ParseError("missing 'terminals' line", source=source)
    try:
        return Topology(tuple(nodes), tuple(edges), tuple(terminals), cap)
    except SchemaError as exc:
        raise ParseError(str(exc), source=source) from None


def format_topo(t: Topology) -> str:
    lines = [" ".join(t.nodes), "terminals " + " ".join(t.terminals)]
    lines += [f"edge {a} {b}" for a, b in t.edges]
    if t.capacity_bits is not None:
        lines.append(f"capacity {t.capacity_bits}")
    return "\n".join(lines) + "\n"


def read_topo(path: str | Path) -> Topology:
    path = Path(path)
    return parse_topo(path.read_text(encoding="utf-8"), source=str(path))


# --------------------------------------------------------------------------- common shapes


def line_topology(names: Sequence[str], capacity_bits: int | None = None,
                  terminals: Sequence[str] | None = None) -> Topology:
    names = tuple(names)
    return Topology(names, tuple(zip(names, names[1:])), tuple(terminals or names), capacity_bits)


def clique_topology(names: Sequence[str], capacity_bits: int | None = None,
                    terminals: Sequence[str] | None = None) -> Topology:
    names = tuple(names)
    return Topology(names, tuple(itertools.combinations(names, 2)), tuple(terminals or names), capacity_bits)
