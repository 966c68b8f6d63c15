"""Query hypergraphs and their decompositions.

Covers GYO reduction, the core/forest split, GYO-rooted decompositions,
internal-node width, degeneracy, the private-attribute normal form used by
the hypergraph protocols, and strong independent sets.
"""

from __future__ import annotations

import itertools
import logging
import random
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .errors import DecompositionError, ParseError, SchemaError

log = logging.getLogger(__name__)

ROOT = "<root>"


@dataclass(frozen=True)
class Hypergraph:
    """Vertices with domain sizes and named hyperedges.

    ``domains`` and ``edges`` keep insertion order, which fixes every
    tie-break in this module.  Duplicate vertex sets are allowed and stay
    distinct by edge id.
    """

    domains: Mapping[str, int]
    edges: Mapping[str, tuple[str, ...]]

    def __post_init__(self):
        object.__setattr__(self, "domains", dict(self.domains))
        object.__setattr__(self, "edges", {e: tuple(vs) for e, vs in self.edges.items()})
        for v, d in self.domains.items():
            if not isinstance(d, int) or d < 1:
                raise SchemaError(f"vertex {v} has invalid domain size {d!r}")
        used = set()
        for e, vs in self.edges.items():
            if not vs:
                raise SchemaError(f"hyperedge {e} is empty")
            if len(set(vs)) != len(vs):
                raise SchemaError(f"hyperedge {e} repeats a vertex")
            for v in vs:
                if v not in self.domains:
                    raise SchemaError(f"hyperedge {e} uses undeclared vertex {v}")
            used.update(vs)
        unused = [v for v in self.domains if v not in used]
        if unused:
            raise SchemaError(f"vertices {unused} appear in no hyperedge")

    @property
    def vertices(self) -> tuple[str, ...]:
        return tuple(self.domains)

    @property
    def r(self) -> int:
        return max((len(vs) for vs in self.edges.values()), default=0)

    @property
    def k(self) -> int:
        return len(self.edges)

    def degree(self, v: str) -> int:
        return sum(1 for vs in self.edges.values() if v in vs)

    def edge_set(self, e: str) -> frozenset[str]:
        return frozenset(self.edges[e])

    def incident(self, v: str) -> list[str]:
        return [e for e, vs in self.edges.items() if v in vs]

    def restrict(self, edge_ids: Iterable[str]) -> "Hypergraph":
        keep = [e for e in self.edges if e in set(edge_ids)]
        verts = {v for e in keep for v in self.edges[e]}
        return Hypergraph({v: d for v, d in self.domains.items() if v in verts},
                          {e: self.edges[e] for e in keep})

    def with_domains(self, domains: Mapping[str, int]) -> "Hypergraph":
        return Hypergraph({v: int(domains[v]) for v in self.domains}, self.edges)

    def is_binary(self) -> bool:
        return all(len(vs) <= 2 for vs in self.edges.values())


# --------------------------------------------------------------------------- GYO


@dataclass(frozen=True)
class GyoStep:
    kind: str  # "eliminate" | "subsume" | "empty"
    edge: str
    vertex: str | None = None
    into: str | None = None
    residual: tuple[str, ...] = ()

    def describe(self) -> str:
        if self.kind == "eliminate":
            return f"eliminate {self.vertex} from {self.edge}"
        if self.kind == "subsume":
            return f"remove {self.edge}({','.join(self.residual)}) subsumed by {self.into}"
        return f"remove {self.edge}() emptied"


@dataclass(frozen=True)
class GyoResult:
    reduced: Hypergraph | None
    residual: dict[str, tuple[str, ...]]
    steps: tuple[GyoStep, ...]
    removed: tuple[str, ...]

    @property
    def surviving(self) -> tuple[str, ...]:
        return tuple(self.residual)

    @property
    def is_empty(self) -> bool:
        return not self.residual

    def trace(self) -> str:
        return "\n".join(s.describe() for s in self.steps)


def gyo_reduce(h: Hypergraph, seed: int | None = None,
               vertex_priority: Sequence[str] | None = None) -> GyoResult:
    """Run GYO to its fixed point.

    Subsumed edges are removed first (lowest edge id, absorbed by the lowest
    containing edge id).  Otherwise one degree-1 vertex is eliminated; by
    default the one declared last is chosen.  ``seed`` shuffles both tie-breaks.
    """
    rng = random.Random(seed) if seed is not None else None
    if vertex_priority is None:
        vertex_priority = list(reversed(h.vertices))
    vrank = {v: i for i, v in enumerate(vertex_priority)}
    edge_order = list(h.edges)
    if rng is not None:
        vlist = list(h.vertices)
        rng.shuffle(vlist)
        vrank = {v: i for i, v in enumerate(vlist)}
        rng.shuffle(edge_order)
    erank = {e: i for i, e in enumerate(edge_order)}
    alive: dict[str, set[str]] = {e: set(h.edges[e]) for e in h.edges}
    steps: list[GyoStep] = []
    removed: list[str] = []

    def vsort(vs):
        return tuple(v for v in h.vertices if v in vs)

    while True:
        victim = None
        for e in sorted(alive, key=erank.get):
            if not alive[e]:
                victim = (e, None)
                break
            hosts = [f for f in alive if f != e and alive[e] <= alive[f]]
            if hosts:
                victim = (e, min(hosts, key=erank.get))
                break
        if victim is not None:
            e, into = victim
            kind = "subsume" if into is not None else "empty"
            steps.append(GyoStep(kind, e, into=into, residual=vsort(alive[e])))
            removed.append(e)
            del alive[e]
            continue
        counts: dict[str, list[str]] = {}
        for e, vs in alive.items():
            for v in vs:
                counts.setdefault(v, []).append(e)
        lonely = [v for v, es in counts.items() if len(es) == 1]
        if not lonely:
            break
        v = min(lonely, key=vrank.get)
        e = counts[v][0]
        alive[e].discard(v)
        steps.append(GyoStep("eliminate", e, vertex=v))
    residual = {e: vsort(alive[e]) for e in h.edges if e in alive}
    reduced = None
    if residual:
        verts = {v for vs in residual.values() for v in vs}
        reduced = Hypergraph({v: h.domains[v] for v in h.vertices if v in verts}, residual)
    return GyoResult(reduced, residual, tuple(steps), tuple(removed))


def is_acyclic(h: Hypergraph) -> bool:
    return gyo_reduce(h).is_empty


# --------------------------------------------------------------------------- core / forest


@dataclass(frozen=True)
class CoreForest:
    surviving: tuple[str, ...]
    forest_edges: tuple[str, ...]
    forest_parent: dict[str, str | None]
    roots: tuple[str, ...]
    core_vertices: tuple[str, ...]

    @property
    def core_edges(self) -> tuple[str, ...]:
        return self.surviving + self.roots

    @property
    def n2(self) -> int:
        return len(self.core_vertices)

    def trees(self) -> dict[str, list[str]]:
        """Forest members grouped by their root, each list in parent-before-child order."""
        kids: dict[str, list[str]] = {}
        for e, p in self.forest_parent.items():
            if p is not None:
                kids.setdefault(p, []).append(e)
        out = {}
        for root in self.roots:
            order, stack = [], [root]
            while stack:
                x = stack.pop(0)
                order.append(x)
                stack.extend(kids.get(x, []))
            out[root] = order
        return out


def _join_forest(bags: Mapping[str, frozenset[str]], anchor: str | None,
                 prefer_non_anchor: bool, rng: random.Random | None) -> dict[str, str | None]:
    """Maximum-weight spanning forest of the bag intersection graph, rooted at ``anchor``.

    Components not touching the anchor are hung from it (weight 0) through
    their first bag.  Without an anchor every component is rooted at its first bag.
    """
    names = list(bags)
    rank = {n: i for i, n in enumerate(names)}
    pairs = []
    for a, b in itertools.combinations(names, 2):
        w = len(bags[a] & bags[b])
        if w == 0:
            continue
        touches = anchor in (a, b)
        tie = rng.random() if rng is not None else (rank[a], rank[b])
        pairs.append((-w, 1 if (touches and prefer_non_anchor) else 0, tie, a, b))
    pairs.sort(key=lambda p: p[:3])
    uf = {n: n for n in names}

    def find(x):
        while uf[x] != x:
            uf[x] = uf[uf[x]]
            x = uf[x]
        return x

    adj: dict[str, list[str]] = {n: [] for n in names}
    for _, _, _, a, b in pairs:
        ra, rb = find(a), find(b)
        if ra != rb:
            uf[ra] = rb
            adj[a].append(b)
            adj[b].append(a)
    roots = []
    if anchor is not None:
        roots.append(anchor)
    for n in names:
        if all(find(n) != find(r) for r in roots):
            if anchor is not None:
                adj[anchor].append(n)
                adj[n].append(anchor)
                uf[find(n)] = find(anchor)
            else:
                roots.append(n)
    parent: dict[str, str | None] = {}
    for r in roots:
        parent[r] = None
        queue = [r]
        while queue:
            x = queue.pop(0)
            for y in sorted(adj[x], key=rank.get):
                if y not in parent:
                    parent[y] = x
                    queue.append(y)
    return parent


def _forest_from_gyo(h: Hypergraph, g: GyoResult, rng: random.Random | None):
    surviving = g.surviving
    forest = tuple(e for e in h.edges if e not in g.residual)
    core_set = frozenset(v for e in surviving for v in h.edges[e])
    bags = {e: h.edge_set(e) for e in forest}
    anchor = None
    if surviving:
        anchor = ROOT
        bags = {ROOT: core_set, **bags}
    parent = _join_forest(bags, anchor, prefer_non_anchor=True, rng=rng)
    forest_parent: dict[str, str | None] = {}
    roots = []
    for e in forest:
        p = parent[e]
        if p is None or p == ROOT:
            forest_parent[e] = None
            roots.append(e)
        else:
            forest_parent[e] = p
    return surviving, forest, forest_parent, tuple(roots)


def core_forest(h: Hypergraph, seed: int | None = None) -> CoreForest:
    """Split ``h`` into the GYO core and the acyclic forest hanging off it.

    The forest is arranged as a maximum-weight join forest in which links
    between forest edges win ties against links to the core, so that as many
    edges as possible sit below a forest edge instead of becoming roots.
    """
    g = gyo_reduce(h)
    rng = random.Random(seed) if seed else None
    surviving, forest, forest_parent, roots = _forest_from_gyo(h, g, rng)
    core = set()
    for e in surviving + roots:
        core.update(h.edges[e])
    return CoreForest(surviving, forest, forest_parent, roots,
                      tuple(v for v in h.vertices if v in core))


# --------------------------------------------------------------------------- decompositions


@dataclass(frozen=True)
class Ghd:
    """Rooted tree of bags; ``order`` lists nodes parents-first."""

    root: str
    parent: dict[str, str | None]
    chi: dict[str, frozenset[str]]
    lam: dict[str, frozenset[str]]
    order: tuple[str, ...] = field(default=())

    def __post_init__(self):
        if not self.order:
            object.__setattr__(self, "order", _bfs_order(self.root, self.parent))

    @property
    def nodes(self) -> tuple[str, ...]:
        return self.order

    def children(self, node: str) -> list[str]:
        return [n for n in self.order if self.parent.get(n) == node]

    def internal_nodes(self) -> list[str]:
        return [n for n in self.order if any(self.parent.get(m) == n for m in self.order)]

    @property
    def internal_count(self) -> int:
        return len(self.internal_nodes())

    def ancestors(self, node: str) -> list[str]:
        """Ancestors from the root down to the node's parent."""
        out = []
        p = self.parent.get(node)
        while p is not None:
            out.append(p)
            p = self.parent.get(p)
        return out[::-1]

    def depth(self, node: str) -> int:
        return len(self.ancestors(node))

    def node_of_edge(self, e: str) -> str:
        for n in self.order:
            if e in self.lam[n]:
                return n
        raise DecompositionError(f"hyperedge {e} has no node")

    def shape(self) -> dict[str, str | None]:
        return dict(self.parent)

    def serialize(self) -> str:
        parts = []
        for n in self.order:
            chi = ",".join(sorted(self.chi[n]))
            lam = ",".join(sorted(self.lam[n]))
            parts.append(f"{n}<-{self.parent[n]}[{chi}|{lam}]")
        return ";".join(parts)

    def rehang(self, node: str, new_parent: str) -> "Ghd":
        parent = dict(self.parent)
        parent[node] = new_parent
        return Ghd(self.root, parent, self.chi, self.lam)


def _bfs_order(root: str, parent: Mapping[str, str | None]) -> tuple[str, ...]:
    kids: dict[str, list[str]] = {}
    for n, p in parent.items():
        if p is not None:
            kids.setdefault(p, []).append(n)
    order, queue = [], [root]
    while queue:
        x = queue.pop(0)
        order.append(x)
        queue.extend(kids.get(x, []))
    if len(order) != len(parent):
        raise DecompositionError("parent map is not a single rooted tree")
    return tuple(order)


def ghd_problems(h: Hypergraph, t: Ghd) -> list[str]:
    """Coverage and running-intersection violations, empty when valid."""
    problems = []
    try:
        _bfs_order(t.root, t.parent)
    except DecompositionError as exc:
        return [str(exc)]
    for e, vs in h.edges.items():
        if not any(set(vs) <= t.chi[n] and e in t.lam[n] for n in t.order):
            problems.append(f"hyperedge {e} not covered")
    for v in h.vertices:
        holders = [n for n in t.order if v in t.chi[n]]
        if not holders:
            continue
        linked = sum(1 for n in holders if t.parent[n] is not None and v in t.chi[t.parent[n]])
        if linked != len(holders) - 1:
            problems.append(f"vertex {v} violates running intersection")
    return problems


def validate_ghd(h: Hypergraph, t: Ghd) -> None:
    problems = ghd_problems(h, t)
    if problems:
        raise DecompositionError("; ".join(problems))


def is_valid_ghd(h: Hypergraph, t: Ghd) -> bool:
    return not ghd_problems(h, t)


def _merged_root_edge(h: Hypergraph, cf: CoreForest) -> str | None:
    core = frozenset(cf.core_vertices)
    for e in h.edges:
        if e in cf.core_edges and h.edge_set(e) == core:
            return e
    return None


def build_gyo_ghd(h: Hypergraph, seed: int = 0) -> Ghd:
    """Decomposition rooted at a bag holding every core vertex.

    Core edges hang as leaves of the root.  A forest edge whose interface
    with its forest parent lies inside the core bag moves up to the root;
    otherwise it stays under its forest parent.  A nonzero seed randomises
    join-forest ties and, for each edge that could move up, whether it does.
    """
    rng = random.Random(seed) if seed else None
    cf = core_forest(h, seed=seed)
    core = frozenset(cf.core_vertices)
    merged = _merged_root_edge(h, cf)
    parent: dict[str, str | None] = {ROOT: None}
    chi: dict[str, frozenset[str]] = {ROOT: core}
    lam: dict[str, frozenset[str]] = {ROOT: frozenset([merged]) if merged else frozenset()}
    for e in h.edges:
        if e == merged:
            continue
        chi[e] = h.edge_set(e)
        lam[e] = frozenset([e])
        p = cf.forest_parent.get(e)
        if e in cf.core_edges or p is None:
            parent[e] = ROOT
            continue
        iface = h.edge_set(e) & h.edge_set(p)
        if iface <= core and (rng is None or rng.random() < 0.5):
            parent[e] = ROOT
        else:
            parent[e] = ROOT if p == merged else p
    order = _bfs_order(ROOT, parent)
    t = Ghd(ROOT, parent, chi, lam, order)
    validate_ghd(h, t)
    return t


def _admits_join_tree(bags: Mapping[str, frozenset[str]], anchor: str) -> dict[str, str | None] | None:
    parent = _join_forest(bags, anchor, prefer_non_anchor=False, rng=None)
    for v in set().union(*bags.values()):
        holders = [n for n in bags if v in bags[n]]
        linked = sum(1 for n in holders if parent[n] is not None and v in bags[parent[n]])
        if linked != len(holders) - 1:
            return None
    return parent


@dataclass(frozen=True)
class WidthResult:
    y: int
    witness: Ghd
    exact: bool
    explored: int


def _witness_for(h: Hypergraph, cf: CoreForest, merged: str | None, internal: Sequence[str],
                 shared: Mapping[str, frozenset[str]]) -> Ghd | None:
    core = frozenset(cf.core_vertices)
    bags = {ROOT: core, **{e: h.edge_set(e) for e in internal}}
    tree = _admits_join_tree(bags, ROOT)
    if tree is None:
        return None
    parent = dict(tree)
    hosts = [ROOT] + list(internal)
    for e in h.edges:
        if e == merged or e in internal:
            continue
        if e in cf.core_edges:
            parent[e] = ROOT
            continue
        p = next((x for x in hosts if shared[e] <= bags[x]), None)
        if p is None:
            return None
        parent[e] = p
    chi = {ROOT: core, **{e: h.edge_set(e) for e in h.edges if e != merged}}
    lam = {ROOT: frozenset([merged]) if merged else frozenset(),
           **{e: frozenset([e]) for e in h.edges if e != merged}}
    return Ghd(ROOT, parent, chi, lam)


def internal_node_width(h: Hypergraph, budget: int = 64, exact_limit: int = 8,
                        seed: int = 0) -> WidthResult:
    """Fewest internal nodes over GYO-rooted decompositions.

    A decomposition is fixed by which forest edges are internal: those bags
    plus the core bag must admit a join tree, and every other forest edge
    must fit under one of them.  All subsets are tried when ``h.k`` is at
    most ``exact_limit``; otherwise ``budget`` greedy pruning restarts give
    an upper bound and ``exact`` is False.
    """
    cf = core_forest(h)
    core = frozenset(cf.core_vertices)
    merged = _merged_root_edge(h, cf)
    candidates = [e for e in h.edges if e not in cf.core_edges]
    shared: dict[str, frozenset[str]] = {}
    for e in h.edges:
        others = set(core)
        for f in h.edges:
            if f != e:
                others.update(h.edges[f])
        shared[e] = h.edge_set(e) & frozenset(others)
    explored = 0
    if h.k <= exact_limit:
        for size in range(len(candidates) + 1):
            for internal in itertools.combinations(candidates, size):
                explored += 1
                t = _witness_for(h, cf, merged, internal, shared)
                if t is not None:
                    validate_ghd(h, t)
                    return WidthResult(t.internal_count, t, True, explored)
        raise DecompositionError("no decomposition found")  # all candidates internal always works
    rng = random.Random(seed)
    best: Ghd | None = None
    for attempt in range(max(1, budget)):
        order = list(candidates)
        if attempt:
            rng.shuffle(order)
        internal = list(order)
        for e in order:
            trial = [x for x in internal if x != e]
            explored += 1
            if _witness_for(h, cf, merged, trial, shared) is not None:
                internal = trial
        t = _witness_for(h, cf, merged, internal, shared)
        if t is not None and (best is None or t.internal_count < best.internal_count):
            best = t
    assert best is not None
    validate_ghd(h, best)
    return WidthResult(best.internal_count, best, False, explored)


def md_ghd(t: Ghd) -> Ghd:
    """Re-hang children to the topmost ancestor that holds their parent interface.

    Nodes are visited bottom-up and the pass repeats until nothing moves.
    """
    cur = t
    moved = True
    while moved:
        moved = False
        for v in reversed(cur.order):
            u = cur.parent[v]
            if u is None or cur.parent[u] is None:
                continue
            iface = cur.chi[v] & cur.chi[u]
            for w in cur.ancestors(u):
                if iface <= cur.chi[w]:
                    cur = cur.rehang(v, w)
                    moved = True
                    break
            if moved:
                break
    return cur


def private_attributes(t: Ghd, node: str) -> frozenset[str]:
    """Attributes of ``node`` shared with some child but absent from its parent."""
    p = t.parent[node]
    above = t.chi[p] if p is not None else frozenset()
    out = set()
    for c in t.children(node):
        out |= (t.chi[node] & t.chi[c]) - above
    return frozenset(out)


# --------------------------------------------------------------------------- degeneracy etc.


def degeneracy(h: Hypergraph) -> int:
    """Largest minimum degree met while peeling min-degree vertices."""
    verts = set(h.vertices)
    edges = {e: set(vs) for e, vs in h.edges.items()}
    order = {v: i for i, v in enumerate(h.vertices)}
    d = 0
    while verts:
        deg = {v: 0 for v in verts}
        for vs in edges.values():
            for v in vs:
                deg[v] += 1
        v = min(verts, key=lambda x: (deg[x], order[x]))
        d = max(d, deg[v])
        verts.discard(v)
        edges = {e: vs for e, vs in edges.items() if v not in vs}
    return d


def _neighbours(h: Hypergraph) -> dict[str, set[str]]:
    nb = {v: set() for v in h.vertices}
    for vs in h.edges.values():
        for v in vs:
            nb[v].update(x for x in vs if x != v)
    return nb


def strong_independent_set(h: Hypergraph, among: Iterable[str] | None = None) -> tuple[str, ...]:
    """Greedy min-degree strong independent set (no two members share a hyperedge)."""
    nb = _neighbours(h)
    order = {v: i for i, v in enumerate(h.vertices)}
    left = set(h.vertices if among is None else among)
    chosen = set()
    while left:
        v = min(left, key=lambda x: (len(nb[x] & left), order[x]))
        chosen.add(v)
        left.discard(v)
        left -= nb[v]
    size_bound = independent_set_bound(h)
    if among is None and len(chosen) < size_bound:
        log.info("strong independent set of size %d is below |V|/(d(r-1)) = %s",
                 len(chosen), size_bound)
    return tuple(v for v in h.vertices if v in chosen)


def independent_set_bound(h: Hypergraph) -> Fraction:
    """The guarantee |V| / (d (r - 1)); |V| when r = 1."""
    d = max(1, degeneracy(h))
    if h.r <= 1:
        return Fraction(len(h.vertices))
    return Fraction(len(h.vertices), d * (h.r - 1))


def is_strongly_independent(h: Hypergraph, vs: Iterable[str]) -> bool:
    vs = set(vs)
    return all(len(vs & set(e)) <= 1 for e in h.edges.values())


# --------------------------------------------------------------------------- text format


def parse_hg(text: str, source: str | None = None) -> Hypergraph:
    """Parse ``vars A:4 B:3`` followed by ``edge <id> <vars...>`` lines."""
    domains: dict[str, int] = {}
    edges: dict[str, tuple[str, ...]] = {}
    saw_vars = False
    for lineno, raw in enumerate(text.split("\n"), start=1):
        line = raw.split("#", 1)[0]
        if not line.strip():
            continue
        toks = line.split()
        col = raw.index(toks[0]) + 1
        if toks[0] == "vars":
            if saw_vars:
                raise ParseError("second 'vars' line", line=lineno, column=col, source=source)
            saw_vars = True
            for tok in toks[1:]:
                tcol = raw.index(tok) + 1
                name, sep, size = tok.partition(":")
                if not sep or not name:
                    raise ParseError(f"expected name:size, got {tok!r}", line=lineno, column=tcol,
                                     source=source)
                try:
                    dsize = int(size)
                except ValueError:
                    raise ParseError(f"bad domain size {size!r}", line=lineno, column=tcol,
                                     source=source) from None
                if name in domains:
                    raise ParseError(f"vertex {name} declared twice", line=lineno, column=tcol,
                                     source=source)
                domains[name] = dsize
        elif toks[0] == "edge":
            if not saw_vars:
                raise ParseError("'edge' before 'vars'", line=lineno, column=col, source=source)
            if len(toks) < 3:
                raise ParseError("edge needs an id and at least one vertex", line=lineno, column=col,
                                 source=source)
            eid = toks[1]
            if eid in edges:
                raise ParseError(f"edge {eid} declared twice", line=lineno, column=raw.index(eid) + 1,
                                 source=source)
            for v in toks[2:]:
                if v not in domains:
                    raise ParseError(f"unknown vertex {v}", line=lineno, column=raw.index(v) + 1,
                                     source=source)
            edges[eid] = tuple(toks[2:])
        else:
            raise ParseError(f"unknown directive {toks[0]!r}", line=lineno, column=col, source=source)
    if not saw_vars:
        raise ParseError("missing 'vars' line", line=1, column=1, source=source)
    try:
        return Hypergraph(domains, edges)
    except SchemaError as exc:
        raise ParseError(str(exc), source=source) from None


def format_hg(h: Hypergraph) -> str:
    lines = ["vars " + " ".join(f"{v}:{d}" for v, d in h.domains.items())]
    for e, vs in h.edges.items():
        lines.append(f"edge {e} " + " ".join(vs))
    return "\n".join(lines) + "\n"


def read_hg(path: str | Path) -> Hypergraph:
    path = Path(path)
    return parse_hg(path.read_text(encoding="utf-8"), source=str(path))
