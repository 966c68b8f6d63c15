"""Upper-bound protocols, each run as node programs on the simulator.

Decomposition-driven protocols share one engine: every non-root internal
node of the decomposition is one "star phase" (broadcast the node's tuples
over a Steiner tree packing, then combine per-tuple products of the
children's messages back to one player).  The root either runs a final star
phase or, when no relation covers the whole core bag, ships the core
messages straight to the answer player.
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Any, Callable, Mapping, Sequence

from . import bounds
from .errors import IncompatibleInputError, SchemaError
from .hypergraph import ROOT, Ghd, Hypergraph, core_forest, internal_node_width, is_acyclic, md_ghd
from .semiring import (
    BOOLEAN, FaqQuery, Relation, Semiring, bits_for_domain, eval_faq_centralized, is_saturated,
    join, project_aggregate, reorder,
)
from .simulator import BitQueue, Message, NodeProgram, SimulationTrace, concat_traces, default_round_cap, run
from .topology import Assignment, Topology, best_delta, edge_key, packing_for

# Multiplier c in "measured rounds <= c * formula" recorded for each protocol.
PROTOCOL_CONSTANTS: dict[str, int] = {
    "trivial": 2,
    "line_pipeline": 2,
    "set_intersection": 4,
    "star_bcq": 4,
    "forest_bcq": 4,
    "general_bcq": 4,
    "star_faq": 4,
    "faq_ss": 4,
    "split_star_faq": 4,
    "matrix_chain": 2,
    "matrix_chain_merge": 2,
}


@dataclass
class ProtocolResult:
    protocol: str
    answer: Any
    rounds: int
    trace: SimulationTrace
    bound_estimate: int | None = None
    phases: list[tuple[str, int]] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)

    @property
    def constant(self) -> int:
        return PROTOCOL_CONSTANTS[self.protocol]


def default_capacity(q: FaqQuery) -> int:
    """ceil(r * log2 Dmax), at least 1."""
    h = q.hypergraph
    dmax = max(h.domains.values(), default=2)
    return max(1, math.ceil(max(h.r, 1) * math.log2(max(dmax, 2))))


def resolve_capacity(q: FaqQuery | None, t: Topology, capacity_bits: int | None) -> int:
    if capacity_bits is not None:
        return capacity_bits
    if t.capacity_bits is not None:
        return t.capacity_bits
    if q is None:
        raise SchemaError("no capacity given")
    return default_capacity(q)


class _Session:
    """Runs phases back to back on one topology and collects their traces."""

    def __init__(self, t: Topology, B: int, duplex: str, cap: int):
        self.t = t
        self.B = B
        self.duplex = duplex
        self.cap = cap
        self.traces: list[SimulationTrace] = []
        self.phases: list[tuple[str, int]] = []
        self.notes: list[str] = []

    def simulate(self, label: str, programs: Mapping[str, NodeProgram]) -> SimulationTrace:
        tr = run(self.t, programs, self.B, self.duplex, self.cap)
        self.traces.append(tr)
        self.phases.append((label, tr.rounds))
        return tr

    def skip(self, label: str) -> None:
        self.phases.append((label, 0))

    def finish(self, name: str, answer: Any, bound: int | None) -> ProtocolResult:
        tr = concat_traces(self.traces, self.B, self.duplex, answer)
        return ProtocolResult(name, answer, tr.rounds, tr, bound, self.phases, self.notes)


def _tree_parents(tree: frozenset, root: str) -> dict[str, str | None]:
    adj: dict[str, list[str]] = {root: []}
    for a, b in sorted(tree):
        adj.setdefault(a, []).append(b)
        adj.setdefault(b, []).append(a)
    parent = {root: None}
    queue = [root]
    while queue:
        x = queue.pop(0)
        for y in adj[x]:
            if y not in parent:
                parent[y] = x
                queue.append(y)
    return parent


def _chunks(n: int, parts: int) -> list[tuple[int, int]]:
    return [(j * n // parts, (j + 1) * n // parts) for j in range(parts)]


# --------------------------------------------------------------------------- flooding


class _FloodNode(NodeProgram):
    def __init__(self, B: int, nbr_tree: dict[str, int], tree_nbrs: dict[int, list[str]],
                 own: list[tuple[int, tuple]]):
        self.B = B
        self.nbr_tree = nbr_tree
        self.tree_nbrs = tree_nbrs
        self.queues = {n: BitQueue() for n in nbr_tree}
        self.got: list[tuple] = []
        for j, item in own:
            for n in tree_nbrs.get(j, ()):
                self.queues[n].push(item, item[-1], tag=j)

    def send(self, rnd):
        out = {}
        for n, q in self.queues.items():
            if len(q):
                out[n] = q.pop(self.B)
        return out

    def receive(self, rnd, inbox):
        for n, msg in inbox.items():
            j = self.nbr_tree[n]
            for item in msg.payload:
                self.got.append(item)
                for m in self.tree_nbrs[j]:
                    if m != n:
                        self.queues[m].push(item, item[-1], tag=j)

    def done(self):
        return not any(len(q) for q in self.queues.values())


def _tree_membership(trees: Sequence[frozenset]) -> tuple[dict, dict]:
    nbr_tree: dict[str, dict[str, int]] = {}
    tree_nbrs: dict[str, dict[int, list[str]]] = {}
    for j, tree in enumerate(trees):
        for a, b in sorted(tree):
            for x, y in ((a, b), (b, a)):
                nbr_tree.setdefault(x, {})[y] = j
                tree_nbrs.setdefault(x, {}).setdefault(j, []).append(y)
    return nbr_tree, tree_nbrs


def _flood(sess: _Session, label: str, trees: Sequence[frozenset],
           sources: Mapping[str, Sequence[tuple[Any, int]]]) -> dict[str, list[Any]]:
    """Every source's items reach every terminal; item i of a source rides tree i*ST//n."""
    t = sess.t
    nbr_tree, tree_nbrs = _tree_membership(trees)
    own: dict[str, list[tuple[int, tuple]]] = {n: [] for n in t.nodes}
    total = 0
    for src, items in sources.items():
        spans = _chunks(len(items), len(trees))
        for j, (lo, hi) in enumerate(spans):
            for i in range(lo, hi):
                payload, bits = items[i]
                own[src].append((j, (src, i, payload, bits)))
        total += len(items)
    progs = {n: _FloodNode(sess.B, nbr_tree.get(n, {}), tree_nbrs.get(n, {}), own[n]) for n in t.nodes}
    if total and len(t.terminals) > 1:
        sess.simulate(label, progs)
    else:
        sess.skip(label)
    out = {}
    for k in t.terminals:
        mine = [(s, i, p) for s, i, p, _ in progs[k].got]
        mine += [(s, i, p) for _, (s, i, p, _) in own[k]]
        mine.sort(key=lambda x: (list(sources).index(x[0]), x[1]))
        if len(mine) != total:
            raise AssertionError(f"flood left {k} with {len(mine)} of {total} items")
        out[k] = [p for _, _, p in mine]
    return out


# --------------------------------------------------------------------------- convergecast


class _ConvergeNode(NodeProgram):
    def __init__(self, B: int, roles: list[dict], op: Callable, elem_bits: int):
        self.B = B
        self.op = op
        self.elem_bits = elem_bits
        self.roles = roles
        self.by_nbr: dict[str, tuple[dict, str]] = {}
        self.queues: dict[str, BitQueue] = {}
        for role in roles:
            for c in role["children"]:
                self.by_nbr[c] = (role, "child")
            if role["parent"] is not None:
                self.queues[role["parent"]] = BitQueue()
        for role in roles:
            self._advance(role)

    def _advance(self, role):
        acc = role["acc"]
        while role["next"] < len(acc) and all(role["count"][c] > role["next"] for c in role["children"]):
            i = role["next"]
            if role["parent"] is not None:
                self.queues[role["parent"]].push(acc[i], self.elem_bits, tag=role["tree"])
            role["next"] += 1

    def send(self, rnd):
        return {n: q.pop(self.B) for n, q in self.queues.items() if len(q)}

    def receive(self, rnd, inbox):
        for n, msg in inbox.items():
            role, _ = self.by_nbr[n]
            for v in msg.payload:
                i = role["count"][n]
                role["acc"][i] = self.op(role["acc"][i], v)
                role["count"][n] += 1
            self._advance(role)

    def done(self):
        return all(r["next"] == len(r["acc"]) for r in self.roles) and not any(
            len(q) for q in self.queues.values())


def _convergecast(sess: _Session, label: str, trees: Sequence[frozenset], sink: str,
                  vectors: Mapping[str, Sequence[Any]], length: int, op: Callable, identity: Any,
                  elem_bits: int) -> list[Any]:
    """Combine equal-length vectors component-wise toward ``sink``; chunk j uses tree j."""
    t = sess.t
    spans = _chunks(length, len(trees))
    roles: dict[str, list[dict]] = {n: [] for n in t.nodes}
    for j, tree in enumerate(trees):
        parents = _tree_parents(tree, sink)
        lo, hi = spans[j]
        for n, p in parents.items():
            vec = vectors.get(n)
            acc = [vec[i] if vec is not None else identity for i in range(lo, hi)]
            kids = [c for c, pc in parents.items() if pc == n]
            roles[n].append({"tree": j, "parent": p, "children": kids, "acc": acc, "next": 0,
                             "count": {c: 0 for c in kids}})
    progs = {n: _ConvergeNode(sess.B, roles[n], op, elem_bits) for n in t.nodes}
    if length and any(vectors.get(n) is not None for n in t.nodes if n != sink):
        sess.simulate(label, progs)
    else:
        sess.skip(label)
    out: list[Any] = []
    for role in roles[sink]:
        if role["next"] != len(role["acc"]):
            raise AssertionError("convergecast did not complete at the sink")
        out.extend(role["acc"])
    if len(out) != length:
        raise AssertionError("convergecast lost elements")
    return out


# --------------------------------------------------------------------------- routing to one sink


class _RouteNode(NodeProgram):
    def __init__(self, name: str, B: int, down: list[str], sink: str, own: list[tuple[Any, int]]):
        self.name = name
        self.B = B
        self.down = down
        self.sink = sink
        self.queues = {n: BitQueue() for n in down}
        self.collected: list[Any] = []
        for item in own:
            self._place(item)

    def _place(self, item):
        if self.name == self.sink:
            self.collected.append(item[0])
            return
        target = min(self.down, key=lambda n: (self.queues[n].pending_bits, self.down.index(n)))
        self.queues[target].push(item, item[1])

    def send(self, rnd):
        return {n: q.pop(self.B) for n, q in self.queues.items() if len(q)}

    def receive(self, rnd, inbox):
        for msg in inbox.values():
            for item in msg.payload:
                self._place(item)

    def done(self):
        return not any(len(q) for q in self.queues.values())


def _route(sess: _Session, label: str, sources: Mapping[str, Sequence[tuple[Any, int]]],
           sink: str) -> list[Any]:
    """Store-and-forward along shortest paths; each hop picks its least-loaded next edge."""
    t = sess.t
    dist = t.distances(sink)
    progs = {}
    for n in t.nodes:
        down = [y for y in t.neighbours(n) if dist[y] == dist[n] - 1]
        progs[n] = _RouteNode(n, sess.B, down, sink, list(sources.get(n, ())))
    if any(sources.get(n) for n in t.nodes if n != sink):
        sess.simulate(label, progs)
    else:
        sess.skip(label)
    return progs[sink].collected


# --------------------------------------------------------------------------- decomposition engine


def _tuple_bits(r: Relation) -> int:
    return max(1, sum(bits_for_domain(d) for d in r.domain_sizes))


def _elem_bits(s: Semiring) -> int:
    return 1 if s.is_boolean else s.encode_bits


def _packing_trees(t: Topology, item_bits: int, count: int, B: int):
    if len(t.terminals) == 1:
        return (frozenset(),), 0
    n_items = math.ceil(count * item_bits / B)
    delta, _ = best_delta(t, n_items)
    return packing_for(t, delta).trees, delta


def _star_phase(sess: _Session, q: FaqQuery, ghd: Ghd, u: str, holder: Mapping[str, str],
                current: Mapping[str, Relation], sink: str) -> Relation:
    s = q.semiring
    base = current[u]
    rows = base.rows
    vals = base.as_dict()
    kids = ghd.children(u)
    msgs = {}
    for c in kids:
        rel = current[c]
        iface = [x for x in rel.attrs if x in ghd.chi[u]]
        m = project_aggregate(rel, iface, s)
        msgs[c] = (m, base.positions(m.attrs), m.as_dict())
    players = {holder[u], sink} | {holder[c] for c in kids}

    def local_vector(p: str) -> list:
        vec = []
        for row in rows:
            v = vals[row] if p == holder[u] else s.one
            for c in kids:
                if holder[c] != p:
                    continue
                m, pos, table = msgs[c]
                v = s.mul(v, table.get(tuple(row[i] for i in pos), s.zero))
            vec.append(v)
        return vec

    label = f"star {u}"
    if len(players) == 1:
        sess.skip(label)
        result = local_vector(sink)
    else:
        tb = _tuple_bits(base)
        eb = _elem_bits(s)
        trees, _ = _packing_trees(sess.t, max(tb, eb), len(rows), sess.B)
        seen = _flood(sess, f"{label} broadcast", trees, {holder[u]: [(r, tb) for r in rows]})
        vectors = {}
        for p in players:
            if seen[p] != rows:
                raise AssertionError("broadcast delivered a different tuple list")
            vectors[p] = local_vector(p)
        result = _convergecast(sess, f"{label} combine", trees, sink, vectors, len(rows),
                               s.mul, s.one, eb)
    entries = tuple((rows[i], v) for i, v in enumerate(result) if not s.is_zero(v))
    return Relation(base.attrs, base.domain_sizes, entries)


def _core_flush(sess: _Session, q: FaqQuery, ghd: Ghd, holder: Mapping[str, str],
                current: Mapping[str, Relation], answer_player: str) -> Relation:
    s = q.semiring
    free = set(q.free_vars)
    kids = ghd.children(ghd.root)
    msgs = {}
    for c in kids:
        others = set()
        for c2 in kids:
            if c2 != c:
                others |= ghd.chi[c2]
        rel = current[c]
        keep = [x for x in rel.attrs if x in free or x in others]
        msgs[c] = project_aggregate(rel, keep, s)
    sources: dict[str, list] = {}
    for c in kids:
        m = msgs[c]
        bits = m.record_bits(s)
        sources.setdefault(holder[c], []).extend(((c, row, v), bits) for row, v in m.entries)
    got = _route(sess, "core flush", sources, answer_player)
    rebuilt: dict[str, dict] = {c: {} for c in kids}
    for c, row, v in got:
        rebuilt[c][row] = v
    acc = Relation.scalar(s.one, s)
    for c in kids:
        m = msgs[c]
        acc = join(acc, Relation(m.attrs, m.domain_sizes, tuple(sorted(rebuilt[c].items()))), s)
    return project_aggregate(acc, [x for x in acc.attrs if x in free], s)


def _holders(ghd: Ghd, a: Assignment) -> dict[str, str]:
    out = {}
    for n in ghd.order:
        lam = sorted(ghd.lam[n])
        out[n] = a.placement[lam[0]] if lam else a.answer_player
    return out


def _max_width(q: FaqQuery) -> int:
    s = q.semiring
    return max((r.record_bits(s) for r in q.relations.values()), default=1)


def _session_for(q: FaqQuery, t: Topology, capacity_bits: int | None, duplex: str) -> _Session:
    B = resolve_capacity(q, t, capacity_bits)
    cap = default_round_cap(q.hypergraph.k, max(q.N, 1), max(_max_width(q), 64), B, len(t.nodes))
    return _Session(t, B, duplex, cap)


def _finish_answer(q: FaqQuery, rel: Relation) -> Relation:
    return reorder(rel, q.free_vars)


def _saturation_notes(q: FaqQuery, answer: Relation) -> list[str]:
    if any(is_saturated(q.semiring, v) for _, v in answer.entries):
        return ["counting semiring saturated at 2^64-1 in the answer"]
    return []


def _run_decomposition(name: str, q: FaqQuery, t: Topology, a: Assignment, ghd: Ghd,
                       capacity_bits: int | None, duplex: str) -> ProtocolResult:
    h = q.hypergraph
    a.check(h.edges, t)
    sess = _session_for(q, t, capacity_bits, duplex)
    holder = _holders(ghd, a)
    current: dict[str, Relation] = {}
    for n in ghd.order:
        if ghd.lam[n]:
            current[n] = q.relations[sorted(ghd.lam[n])[0]]
    for u in reversed(ghd.order):
        if u == ghd.root or not ghd.children(u):
            continue
        current[u] = _star_phase(sess, q, ghd, u, holder, current, holder[u])
    root = ghd.root
    if ghd.lam[root]:
        top = _star_phase(sess, q, ghd, root, holder, current, a.answer_player)
        answer = project_aggregate(top, [x for x in top.attrs if x in set(q.free_vars)], q.semiring)
    elif ghd.children(root):
        answer = _core_flush(sess, q, ghd, holder, current, a.answer_player)
    else:
        answer = Relation.scalar(q.semiring.one, q.semiring)
    answer = _finish_answer(q, answer)
    sess.notes.extend(_saturation_notes(q, answer))
    bound = bounds.protocol_upper_bound(q, t, a, name, sess.B, ghd=ghd)
    return sess.finish(name, answer, bound)


# --------------------------------------------------------------------------- checks


def _require_bcq(q: FaqQuery) -> None:
    if not q.semiring.is_boolean:
        raise IncompatibleInputError("this protocol needs the Boolean semiring")
    if q.free_vars:
        raise IncompatibleInputError("this protocol needs a query with no free variables")


def _require_binary(h: Hypergraph) -> None:
    if not h.is_binary():
        raise IncompatibleInputError("this protocol needs hyperedges of arity at most two")


def star_center(h: Hypergraph) -> str | None:
    """The shared vertex of a star of binary edges, or None if ``h`` is not such a star."""
    if not h.is_binary() or not h.edges:
        return None
    common = set.intersection(*(set(vs) for vs in h.edges.values()))
    for v in h.vertices:
        if v in common and all(h.degree(x) == 1 for x in h.vertices if x != v):
            return v
    return None


def star_ghd(h: Hypergraph, center_edge: str | None = None) -> Ghd:
    """Root holding one relation with every other hyperedge as a leaf below it."""
    center_edge = center_edge or next(iter(h.edges))
    parent = {ROOT: None}
    chi = {ROOT: h.edge_set(center_edge)}
    lam = {ROOT: frozenset([center_edge])}
    for e in h.edges:
        if e != center_edge:
            parent[e] = ROOT
            chi[e] = h.edge_set(e)
            lam[e] = frozenset([e])
    return Ghd(ROOT, parent, chi, lam)


def is_star_ghd(ghd: Ghd) -> bool:
    return all(ghd.parent[n] in (None, ghd.root) for n in ghd.order)


def width_ghd(h: Hypergraph) -> Ghd:
    """Private-attribute normal form of a minimum internal-node-width witness."""
    return md_ghd(internal_node_width(h).witness)


# --------------------------------------------------------------------------- public protocols


def star_bcq(q: FaqQuery, t: Topology, a: Assignment, capacity_bits: int | None = None,
             duplex: str = "full") -> ProtocolResult:
    """Broadcast the center relation, filter locally, intersect indicator vectors."""
    _require_bcq(q)
    if star_center(q.hypergraph) is None:
        raise IncompatibleInputError("query hypergraph is not a star of binary edges")
    return _run_decomposition("star_bcq", q, t, a, star_ghd(q.hypergraph), capacity_bits, duplex)


def forest_bcq(q: FaqQuery, t: Topology, a: Assignment, capacity_bits: int | None = None,
               duplex: str = "full") -> ProtocolResult:
    """Strip stars bottom-up along a minimum-width decomposition of an acyclic query."""
    _require_bcq(q)
    _require_binary(q.hypergraph)
    if not is_acyclic(q.hypergraph):
        raise IncompatibleInputError("query hypergraph is cyclic")
    return _run_decomposition("forest_bcq", q, t, a, width_ghd(q.hypergraph), capacity_bits, duplex)


def general_bcq(q: FaqQuery, t: Topology, a: Assignment, capacity_bits: int | None = None,
                duplex: str = "full") -> ProtocolResult:
    """Forest phases, then ship the core messages to the answer player."""
    _require_bcq(q)
    _require_binary(q.hypergraph)
    return _run_decomposition("general_bcq", q, t, a, width_ghd(q.hypergraph), capacity_bits, duplex)


def star_faq(q: FaqQuery, t: Topology, a: Assignment, ghd: Ghd | None = None,
             capacity_bits: int | None = None, duplex: str = "full") -> ProtocolResult:
    """One star phase in any semiring; only the center's holder multiplies in its values."""
    if ghd is None:
        ghd = width_ghd(q.hypergraph)
    if not is_star_ghd(ghd):
        raise IncompatibleInputError("decomposition is not a star")
    if not set(q.free_vars) <= ghd.chi[ghd.root]:
        raise IncompatibleInputError("free variables must lie in the center bag")
    return _run_decomposition("star_faq", q, t, a, ghd, capacity_bits, duplex)


def faq_ss(q: FaqQuery, t: Topology, a: Assignment, capacity_bits: int | None = None,
           duplex: str = "full") -> ProtocolResult:
    """General sum-of-products protocol; free variables must lie in the core."""
    cf = core_forest(q.hypergraph)
    if not set(q.free_vars) <= set(cf.core_vertices):
        raise IncompatibleInputError(f"free variables {q.free_vars} are not all core vertices "
                                     f"{cf.core_vertices}")
    return _run_decomposition("faq_ss", q, t, a, width_ghd(q.hypergraph), capacity_bits, duplex)


def trivial_protocol(q: FaqQuery, t: Topology, a: Assignment, capacity_bits: int | None = None,
                     duplex: str = "full") -> ProtocolResult:
    """Ship every relation to the answer player and evaluate there."""
    h = q.hypergraph
    a.check(h.edges, t)
    sess = _session_for(q, t, capacity_bits, duplex)
    s = q.semiring
    sources: dict[str, list] = {}
    for e, rel in q.relations.items():
        bits = rel.record_bits(s)
        sources.setdefault(a.placement[e], []).extend(((e, row, v), bits) for row, v in rel.entries)
    got = _route(sess, "ship relations", sources, a.answer_player)
    rebuilt: dict[str, dict] = {e: {} for e in h.edges}
    for e, row, v in got:
        rebuilt[e][row] = v
    rels = {e: Relation(q.relations[e].attrs, q.relations[e].domain_sizes, tuple(sorted(rebuilt[e].items())))
            for e in h.edges}
    answer = _finish_answer(q, eval_faq_centralized(q.with_relations(rels)))
    sess.notes.extend(_saturation_notes(q, answer))
    bound = bounds.protocol_upper_bound(q, t, a, "trivial", sess.B)
    return sess.finish("trivial", answer, bound)


def set_intersection_protocol(vectors: Mapping[str, Sequence[int]], t: Topology, sink: str,
                              capacity_bits: int | None = None, duplex: str = "full") -> ProtocolResult:
    """Component-wise AND of equal-length bit vectors, chunked over a Steiner packing."""
    lengths = {len(v) for v in vectors.values()}
    if len(lengths) > 1:
        raise IncompatibleInputError("bit vectors differ in length")
    n = lengths.pop() if lengths else 0
    for p in vectors:
        if p not in t.terminals:
            raise IncompatibleInputError(f"{p} is not a terminal")
    B = capacity_bits or t.capacity_bits or max(1, math.ceil(math.log2(max(n, 2))))
    sess = _Session(t, B, duplex, default_round_cap(1, max(n, 1), 1, B, len(t.nodes)))
    if len(t.terminals) == 1:
        trees, delta = (frozenset(),), 0
    else:
        delta, _ = best_delta(t, math.ceil(n / B))
        trees = packing_for(t, delta).trees
    result = _convergecast(sess, "and", trees, sink, {p: list(v) for p, v in vectors.items()}, n,
                           lambda x, y: x & y, 1, 1)
    st = len(trees)
    bound = (math.ceil(n / (B * st)) + delta) if n else delta
    return sess.finish("set_intersection", tuple(result), bound)


# --------------------------------------------------------------------------- line pipeline


class _PipeNode(NodeProgram):
    """Filter-and-forward for sorted value streams along in-trees."""

    def __init__(self, name: str, bits: int, routes: list[dict], filt: frozenset | None):
        self.name = name
        self.bits = bits
        self.filt = filt
        self.routes = routes
        self.out: dict[str, list[list]] = {}
        self.survivors: list[int] = []
        for r in routes:
            r.update(recv={c: set() for c in r["children"]}, top={c: -1 for c in r["children"]},
                     eos={c: False for c in r["children"]}, pending=[], finished=False, sent_any=False)
            if r["parent"] is not None:
                self.out.setdefault(r["parent"], [])
            if not r["children"]:
                values = sorted(v for v in (filt or ()) if r["lo"] <= v < r["hi"])
                for v in values:
                    self._emit(r, v)
                self._finish(r)

    def _emit(self, r, v):
        if r["parent"] is None:
            self.survivors.append(v)
        else:
            self.out[r["parent"]].append([v, False])

    def _finish(self, r):
        r["finished"] = True
        if r["parent"] is None:
            return
        q = self.out[r["parent"]]
        if q and not q[-1][1] and q[-1][0] is not None:
            q[-1][1] = True
        else:
            q.append([None, True])

    def _decide(self, r):
        first = r["children"][0]
        while r["pending"]:
            v = r["pending"][0]
            known = all(v in r["recv"][c] or r["eos"][c] or r["top"][c] > v for c in r["children"])
            if not known:
                break
            r["pending"].pop(0)
            if all(v in r["recv"][c] for c in r["children"]) and (self.filt is None or v in self.filt):
                self._emit(r, v)
        if not r["pending"] and r["eos"][first] and not r["finished"]:
            if all(r["eos"][c] for c in r["children"]):
                self._finish(r)

    def send(self, rnd):
        msgs = {}
        for nbr, q in self.out.items():
            if q:
                v, eos = q.pop(0)
                msgs[nbr] = Message((v, eos), self.bits if v is not None else 1, tag=1 if eos else 0)
        return msgs

    def receive(self, rnd, inbox):
        for nbr, msg in inbox.items():
            v, eos = msg.payload
            for r in self.routes:
                if nbr in r["children"]:
                    if v is not None:
                        r["recv"][nbr].add(v)
                        r["top"][nbr] = v
                        if nbr == r["children"][0]:
                            r["pending"].append(v)
                    if eos:
                        r["eos"][nbr] = True
                    self._decide(r)

    def done(self):
        return all(r["finished"] for r in self.routes) and not any(self.out.values())

    def output(self):
        return sorted(self.survivors)


def _default_path_routes(t: Topology, answer: str) -> list[list[tuple[str, str]]]:
    order = t.path_order()
    i = order.index(answer)
    arcs = [(order[j], order[j + 1]) for j in range(i)]
    arcs += [(order[j], order[j - 1]) for j in range(len(order) - 1, i, -1)]
    return [arcs]


def line_pipeline_bcq(q: FaqQuery, t: Topology, a: Assignment,
                      routes: Sequence[Sequence[tuple[str, str]]] | None = None,
                      capacity_bits: int | None = None, duplex: str = "full") -> ProtocolResult:
    """Stream sorted join values toward the answer player, filtering at every hop.

    Each route is an in-tree (list of arcs) ending at the answer player.  With
    several routes the join attribute's domain is cut into equal contiguous
    value ranges, one per route.  One join value travels per message.
    """
    _require_bcq(q)
    h = q.hypergraph
    a.check(h.edges, t)
    common = set.intersection(*(set(vs) for vs in h.edges.values())) if h.edges else set()
    join_attr = next((v for v in h.vertices if v in common and
                      all(h.degree(x) == 1 for x in h.vertices if x != v)), None)
    if join_attr is None:
        raise IncompatibleInputError("relations must share one join attribute with all others private")
    if routes is None:
        if not t.is_path():
            raise IncompatibleInputError("no routes given and the topology is not a path")
        routes = _default_path_routes(t, a.answer_player)
    edges = set(t.edges)
    used: set = set()
    holders = set(a.placement.values())
    for arcs in routes:
        heads = {x for x, _ in arcs}
        nodes = heads | {y for _, y in arcs} | {a.answer_player}
        for x, y in arcs:
            k = edge_key(x, y)
            if k not in edges:
                raise IncompatibleInputError(f"route arc {x}->{y} is not an edge")
            if k in used:
                raise IncompatibleInputError(f"edge {x}-{y} used by two routes")
            used.add(k)
        if not holders <= nodes:
            raise IncompatibleInputError("every route must visit every relation holder")
        outdeg = {}
        for x, _ in arcs:
            outdeg[x] = outdeg.get(x, 0) + 1
        if any(d > 1 for d in outdeg.values()) or a.answer_player in outdeg:
            raise IncompatibleInputError("route is not an in-tree toward the answer player")
    s = q.semiring
    dom = h.domains[join_attr]
    filters: dict[str, frozenset | None] = {n: None for n in t.nodes}
    for e, p in a.placement.items():
        rel = q.relations[e]
        vals = frozenset(row[0] for row in project_aggregate(rel, [join_attr], s).rows)
        filters[p] = vals if filters[p] is None else filters[p] & vals
    bits = bits_for_domain(dom)
    B = resolve_capacity(q, t, capacity_bits)
    if bits > B:
        raise IncompatibleInputError(f"a join value needs {bits} bits, budget is {B}")
    parts = _chunks(dom, len(routes))
    per_node: dict[str, list[dict]] = {n: [] for n in t.nodes}
    for j, arcs in enumerate(routes):
        lo, hi = parts[j]
        parent = {x: y for x, y in arcs}
        members = set(parent) | set(parent.values()) | {a.answer_player}
        for n in t.nodes:
            if n not in members:
                continue
            kids = sorted((x for x, y in arcs if y == n), key=t.nodes.index)
            if not kids and filters[n] is None and n != a.answer_player:
                raise IncompatibleInputError(f"route leaf {n} holds no relation")
            per_node[n].append({"parent": parent.get(n), "children": kids, "lo": lo, "hi": hi})
    progs = {n: _PipeNode(n, bits, per_node[n], filters[n]) for n in t.nodes if per_node[n]}
    sess = _Session(t, B, duplex, default_round_cap(h.k, max(q.N, 1), bits, B, len(t.nodes)))
    sess.simulate("pipeline", progs)
    survivors = progs[a.answer_player].output()
    answer = Relation.scalar(1 if survivors else 0, BOOLEAN)
    bound = bounds.protocol_upper_bound(q, t, a, "line_pipeline", B)
    res = sess.finish("line_pipeline", answer, bound)
    res.notes.append(f"surviving join values: {len(survivors)}")
    return res


# --------------------------------------------------------------------------- hash-split star


@dataclass(frozen=True)
class ConsistentHashFamily:
    """Shard each relation by a hash of its projection onto the parent interface.

    A child relation's tuples that agree on the shared attributes always land
    on one player.  The relation at the root is hashed on its full tuple.
    """

    ghd: Ghd
    players: tuple[str, ...]
    perm: tuple[int, ...]
    offset: int

    def interface(self, h: Hypergraph, e: str) -> tuple[str, ...]:
        node = self.ghd.node_of_edge(e)
        p = self.ghd.parent[node]
        if p is None:
            return tuple(h.edges[e])
        shared = self.ghd.chi[node] & self.ghd.chi[p]
        return tuple(v for v in h.edges[e] if v in shared)

    def player_for(self, h: Hypergraph, e: str, row: Sequence[int]) -> str:
        iface = self.interface(h, e)
        verts = h.edges[e]
        idx = 0
        for v in iface:
            idx = idx * h.domains[v] + row[verts.index(v)]
        return self.players[self.perm[(idx + self.offset) % len(self.players)]]

    def split(self, q: FaqQuery) -> dict[str, dict[str, Relation]]:
        h = q.hypergraph
        out: dict[str, dict[str, dict]] = {p: {e: {} for e in h.edges} for p in self.players}
        for e, rel in q.relations.items():
            for row, v in rel.entries:
                out[self.player_for(h, e, row)][e][row] = v
        return {p: {e: Relation(q.relations[e].attrs, q.relations[e].domain_sizes, tuple(sorted(d.items())))
                    for e, d in per.items()} for p, per in out.items()}

    def problems(self, q: FaqQuery) -> list[str]:
        """Tuples of one child relation sharing an interface projection but not a player."""
        h = q.hypergraph
        found = []
        for e, rel in q.relations.items():
            node = self.ghd.node_of_edge(e)
            if self.ghd.parent[node] is None:
                continue
            p = self.ghd.parent[node]
            shared = [v for v in h.edges[e] if v in self.ghd.chi[node] & self.ghd.chi[p]]
            pos = [h.edges[e].index(v) for v in shared]
            owner: dict[tuple, str] = {}
            for row in rel.rows:
                key = tuple(row[i] for i in pos)
                who = self.player_for(h, e, row)
                if owner.setdefault(key, who) != who:
                    found.append(f"{e}: interface {key} split across players")
        return found


def consistent_hash_family(ghd: Ghd, players: Sequence[str], seed: int = 0) -> ConsistentHashFamily:
    rng = random.Random(seed)
    perm = list(range(len(players)))
    if seed:
        rng.shuffle(perm)
    offset = rng.randrange(len(players)) if seed else 0
    return ConsistentHashFamily(ghd, tuple(players), tuple(perm), offset)


def split_star_faq(q: FaqQuery, t: Topology, family: ConsistentHashFamily, answer_player: str | None = None,
                   capacity_bits: int | None = None, duplex: str = "full") -> ProtocolResult:
    """Star protocol over hash-split relations, with a per-tuple counter of contributing leaves."""
    ghd = family.ghd
    h = q.hypergraph
    s = q.semiring
    if not is_star_ghd(ghd) or not ghd.lam[ghd.root]:
        raise IncompatibleInputError("split star needs a star decomposition whose root holds a relation")
    if not set(q.free_vars) <= ghd.chi[ghd.root]:
        raise IncompatibleInputError("free variables must lie in the center bag")
    bad = family.problems(q)
    if bad:
        raise IncompatibleInputError("hash family is not consistent: " + "; ".join(bad[:3]))
    for p in family.players:
        if p not in t.terminals:
            raise IncompatibleInputError(f"{p} is not a terminal")
    answer_player = answer_player or family.players[0]
    shards = family.split(q)
    center = sorted(ghd.lam[ghd.root])[0]
    leaves = [sorted(ghd.lam[c])[0] for c in ghd.children(ghd.root)]
    sess = _session_for(q, t, capacity_bits, duplex)
    base = q.relations[center]
    tb = _tuple_bits(base)
    count_bits = bits_for_domain(len(leaves) + 1)
    eb = _elem_bits(s) + count_bits
    trees, _ = _packing_trees(t, max(tb, eb), len(base), sess.B)
    sources = {p: [(row, tb) for row in shards[p][center].rows] for p in family.players}
    seen = _flood(sess, "center broadcast", trees, sources)
    rows = sorted(seen[answer_player])
    vectors = {}
    for p in family.players:
        if sorted(seen[p]) != rows:
            raise AssertionError("broadcast delivered different tuple sets")
        mine = shards[p][center].as_dict()
        msgs = []
        for e in leaves:
            rel = shards[p][e]
            m = project_aggregate(rel, [x for x in rel.attrs if x in ghd.chi[ghd.root]], s)
            msgs.append((m.as_dict(), base.positions(m.attrs)))
        vec = []
        for row in rows:
            v = mine.get(row, s.one)
            cnt = 0
            for table, pos in msgs:
                m = table.get(tuple(row[i] for i in pos))
                if m is not None:
                    v = s.mul(v, m)
                    cnt += 1
            vec.append((v, cnt))
        vectors[p] = vec
    combined = _convergecast(sess, "combine", trees, answer_player, vectors, len(rows),
                             lambda x, y: (s.mul(x[0], y[0]), x[1] + y[1]), (s.one, 0), eb)
    entries = tuple((rows[i], v) for i, (v, c) in enumerate(combined) if c == len(leaves) and not s.is_zero(v))
    top = Relation(base.attrs, base.domain_sizes, entries)
    answer = _finish_answer(q, project_aggregate(top, [x for x in top.attrs if x in set(q.free_vars)], s))
    bound = bounds.protocol_upper_bound(q, t, Assignment({e: answer_player for e in h.edges}, answer_player),
                                        "split_star_faq", sess.B, ghd=ghd, extra_bits=count_bits,
                                        players=len(family.players))
    return sess.finish("split_star_faq", answer, bound)


# --------------------------------------------------------------------------- matrix chains over F2


def f2_matvec(rows: Sequence[int], x: int) -> int:
    y = 0
    for i, row in enumerate(rows):
        if bin(row & x).count("1") & 1:
            y |= 1 << i
    return y


def f2_matmul(a: Sequence[int], b: Sequence[int]) -> list[int]:
    """Rows of a @ b, where row i of a matrix is an int whose bit j is entry (i, j)."""
    out = []
    for row in a:
        acc = 0
        k = 0
        r = row
        while r:
            if r & 1:
                acc ^= b[k]
            r >>= 1
            k += 1
        out.append(acc)
    return out


def f2_identity(n: int) -> list[int]:
    return [1 << i for i in range(n)]


def f2_chain_direct(x: int, mats: Sequence[Sequence[int]]) -> int:
    y = x
    for m in mats:
        y = f2_matvec(m, y)
    return y


def random_f2_chain(k: int, n: int, seed: int) -> tuple[int, list[list[int]]]:
    rng = random.Random(seed)
    x = rng.getrandbits(n) if n else 0
    mats = [[rng.getrandbits(n) for _ in range(n)] for _ in range(k)]
    return x, mats


def _line_players(t: Topology, k: int) -> list[str]:
    if not t.is_path() or len(t.nodes) != k + 2:
        raise IncompatibleInputError(f"need a path of {k + 2} nodes")
    order = t.path_order()
    if order[0] != t.nodes[0]:
        order.reverse()
    return order


class _ChainNode(NodeProgram):
    """Waits for the whole vector from the left, multiplies, passes it right."""

    def __init__(self, B: int, n: int, right: str | None, matrix: Sequence[int] | None, start: int | None):
        self.B = B
        self.n = n
        self.right = right
        self.matrix = matrix
        self.queue = BitQueue()
        self.value = None
        if start is not None:
            self._got(start)

    def _got(self, v: int):
        self.value = f2_matvec(self.matrix, v) if self.matrix is not None else v
        if self.right is not None:
            self.queue.push(self.value, self.n)

    def send(self, rnd):
        return {self.right: self.queue.pop(self.B)} if len(self.queue) else {}

    def receive(self, rnd, inbox):
        for msg in inbox.values():
            for v in msg.payload:
                self._got(v)

    def done(self):
        return not len(self.queue)

    def output(self):
        return self.value


def matrix_chain(x: int, mats: Sequence[Sequence[int]], t: Topology, n: int | None = None,
                 capacity_bits: int | None = None, duplex: str = "full") -> ProtocolResult:
    """P0 holds x, Pi holds Ai; each hop forwards Ai...A1 x once it has all of it."""
    k = len(mats)
    n = n if n is not None else len(mats[0]) if mats else max(x.bit_length(), 1)
    order = _line_players(t, k)
    B = capacity_bits or t.capacity_bits or 1
    progs = {}
    for i, name in enumerate(order):
        right = order[i + 1] if i + 1 < len(order) else None
        matrix = mats[i - 1] if 1 <= i <= k else None
        progs[name] = _ChainNode(B, n, right, matrix, x if i == 0 else None)
    sess = _Session(t, B, duplex, default_round_cap(k + 1, 1, n, B, len(t.nodes)))
    sess.simulate("pipeline", progs)
    answer = progs[order[-1]].output()
    bound = k * math.ceil(n / B) + k
    return sess.finish("matrix_chain", answer, bound)


class _StreamNode(NodeProgram):
    """Relays B-bit chunks along fixed paths without waiting for whole items."""

    def __init__(self, name: str, B: int):
        self.name = name
        self.B = B
        self.queues: dict[str, BitQueue] = {}
        self.next_hop: dict[int, str] = {}
        self.received: dict[int, list] = {}

    def add_stream(self, sid: int, path: Sequence[str], chunks: Sequence[tuple[Any, int]] | None):
        i = path.index(self.name)
        if i + 1 < len(path):
            self.next_hop[sid] = path[i + 1]
            self.queues.setdefault(path[i + 1], BitQueue())
        else:
            self.received[sid] = []
        for c, bits in chunks or ():
            self.queues[self.next_hop[sid]].push((sid, c, bits), bits, tag=sid)

    def send(self, rnd):
        return {n: q.pop(self.B) for n, q in self.queues.items() if len(q)}

    def receive(self, rnd, inbox):
        for msg in inbox.values():
            for sid, c, bits in msg.payload:
                if sid in self.next_hop:
                    self.queues[self.next_hop[sid]].push((sid, c, bits), bits, tag=sid)
                else:
                    self.received[sid].append(c)

    def done(self):
        return not any(len(q) for q in self.queues.values())


def _bit_chunks(value: int, total_bits: int, B: int) -> list[tuple[int, int]]:
    out = []
    for lo in range(0, total_bits, B):
        width = min(B, total_bits - lo)
        out.append(((value >> lo) & ((1 << width) - 1), width))
    return out or [(0, 1)]


def _join_chunks(chunks: Sequence[int], total_bits: int, B: int) -> int:
    v = 0
    for i, c in enumerate(chunks):
        v |= c << (i * B)
    return v


def _pack_matrix(m: Sequence[int], n: int) -> int:
    v = 0
    for i, row in enumerate(m):
        v |= row << (i * n)
    return v


def _unpack_matrix(v: int, n: int) -> list[int]:
    mask = (1 << n) - 1
    return [(v >> (i * n)) & mask for i in range(n)]


def _streams(sess: _Session, label: str, streams: Sequence[tuple[Sequence[str], int, int]]) -> list[int]:
    """Send each (path, value, bits) along its path in B-bit chunks, cut-through."""
    t = sess.t
    progs = {n: _StreamNode(n, sess.B) for n in t.nodes}
    for sid, (path, value, bits) in enumerate(streams):
        chunks = _bit_chunks(value, bits, sess.B)
        for n in path:
            progs[n].add_stream(sid, path, chunks if n == path[0] else None)
    sess.simulate(label, progs)
    out = []
    for sid, (path, value, bits) in enumerate(streams):
        out.append(_join_chunks(progs[path[-1]].received[sid], bits, sess.B))
    return out


def matrix_chain_merge(x: int, mats: Sequence[Sequence[int]], t: Topology, n: int | None = None,
                       capacity_bits: int | None = None, duplex: str = "full") -> ProtocolResult:
    """Pairwise merge of matrix products in log k rounds of disjoint transfers, then one vector."""
    k = len(mats)
    n = n if n is not None else len(mats[0]) if mats else max(x.bit_length(), 1)
    order = _line_players(t, k)
    B = capacity_bits or t.capacity_bits or 1
    sess = _Session(t, B, duplex, default_round_cap(k + 1, n * n, 1, B, len(t.nodes)))
    if k == 0:
        (y,) = _streams(sess, "vector", [(order, x, n)])
        return sess.finish("matrix_chain_merge", y, math.ceil(n / B) + 1)
    size = 1
    while size < k:
        size *= 2
    pad = size - k
    # position p in 1..size; physical player order[p - pad] for p > pad, identities before that
    held: dict[int, list[int]] = {p: list(mats[p - pad - 1]) for p in range(pad + 1, size + 1)}
    step = 1
    level = 0
    while step < size:
        level += 1
        moves = []
        for p in range(step, size + 1, 2 * step):
            dst = p + step
            if p in held:
                moves.append((p, dst))
        if moves:
            streams = [(order[p - pad: dst - pad + 1], _pack_matrix(held[p], n), n * n) for p, dst in moves]
            got = _streams(sess, f"merge level {level}", streams)
            for (p, dst), packed in zip(moves, got):
                held[dst] = f2_matmul(held[dst], _unpack_matrix(packed, n))
        step *= 2
    product = held[size]
    (xv,) = _streams(sess, "vector to last holder", [(order[: k + 1], x, n)])
    y = f2_matvec(product, xv)
    (out,) = _streams(sess, "result", [(order[k:], y, n)])
    log_k = max(1, math.ceil(math.log2(max(k, 2))))
    bound = math.ceil(n * n / B) * log_k + k + math.ceil(n / B)
    return sess.finish("matrix_chain_merge", out, bound)
