"""Round-complexity formulas and TRIBES-embedded hard instances.

Formulas return ceiled integers with every constant set to 1.  The hard
instance generators turn m set-disjointness pairs into a Boolean query whose
answer is the conjunction of "S_i and T_i intersect".
"""

from __future__ import annotations

import math
import random
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import networkx as nx

from .errors import IncompatibleInputError, SchemaError
from .hypergraph import (
    Ghd, Hypergraph, core_forest, degeneracy, internal_node_width, is_acyclic, md_ghd,
    private_attributes, strong_independent_set,
)
from .semiring import BOOLEAN, FaqQuery, Relation, bits_for_domain
from .topology import Assignment, Topology, mcf_schedule, min_cut, st_table

DENSE_CORE_DEGREE = 10


@dataclass(frozen=True)
class BoundsInput:
    """Parameters of the upper and lower formulas.

    ``item_bits`` scales N to a bit volume and ``delta_weight`` multiplies the
    latency term; both default to 1, which gives the plain formula.
    """

    y: int
    n2: int
    d: int
    r: int
    N: int
    B: int
    mincut: int
    st_table: Mapping[int, int]
    mcf_rounds: int = 0
    item_bits: int = 1
    delta_weight: int = 1


def phase_term(b: BoundsInput) -> int:
    """min over Delta of ceil(N * item_bits / (B * ST(Delta))) + delta_weight * Delta."""
    if not b.st_table:
        raise SchemaError("empty Steiner packing table")
    best = None
    for delta, st in b.st_table.items():
        if st <= 0:
            continue
        v = math.ceil(b.N * b.item_bits / (b.B * st)) + b.delta_weight * delta
        best = v if best is None else min(best, v)
    if best is None:
        raise SchemaError("no Steiner tree connects the terminals")
    return best


def upper_bound_bcq(b: BoundsInput) -> int:
    """y * min_Delta(ceil(N / (B ST(Delta))) + Delta) + flow rounds."""
    if b.y == 0:
        return b.mcf_rounds
    return b.y * phase_term(b) + b.mcf_rounds


def lower_bound_bcq(b: BoundsInput) -> int:
    """ceil((y/r + n2/(d r)) * N / mincut)."""
    if b.mincut <= 0:
        raise SchemaError("mincut must be positive")
    r = max(b.r, 1)
    d = max(b.d, 1)
    return math.ceil((b.y / r + b.n2 / (d * r)) * b.N / b.mincut)


def polylog_slack(N: int, mincut: int) -> float:
    """8 log2 N max(1, log2 mincut), the divisor used when comparing lower bounds to measurements."""
    return 8 * math.log2(max(N, 2)) * max(1.0, math.log2(max(mincut, 1)))


def _phase_count(ghd: Ghd) -> int:
    n = sum(1 for u in ghd.order if u != ghd.root and ghd.children(u))
    return n + (1 if ghd.lam[ghd.root] else 0)


def _flow_demands(q: FaqQuery, a: Assignment, edges: Sequence[str]) -> list[tuple[str, int]]:
    s = q.semiring
    return [(a.placement[e], len(q.relations[e]) * q.relations[e].record_bits(s)) for e in edges]


def protocol_upper_bound(q: FaqQuery, t: Topology, a: Assignment, protocol: str, B: int,
                         ghd: Ghd | None = None, extra_bits: int = 0, players: int | None = None) -> int:
    """The upper formula instantiated with the parameters a protocol actually uses."""
    s = q.semiring
    h = q.hypergraph
    N = max(q.N, 1)
    tuple_bits = max(1, max(sum(bits_for_domain(d) for d in r.domain_sizes) for r in q.relations.values()))
    value_bits = 1 if s.is_boolean else s.encode_bits
    single = len(t.terminals) == 1
    table = st_table(t) if not single else {0: 1}
    if protocol == "trivial":
        mcf = mcf_schedule(t, _flow_demands(q, a, list(h.edges)), a.answer_player, B).rounds
        return upper_from(0, N, B, table, mcf)
    if protocol == "line_pipeline":
        return upper_from(1, N, B, table, 0, item_bits=bits_for_domain(max(h.domains.values())))
    if ghd is None:
        raise SchemaError(f"protocol {protocol} needs its decomposition")
    y = _phase_count(ghd)
    mcf = 0
    if not ghd.lam[ghd.root] and ghd.children(ghd.root):
        edges = [sorted(ghd.lam[c])[0] for c in ghd.children(ghd.root)]
        mcf = mcf_schedule(t, _flow_demands(q, a, edges), a.answer_player, B).rounds
    if single:
        return mcf
    weight = players if players else 1
    return upper_from(y, N, B, table, mcf, item_bits=tuple_bits + value_bits + extra_bits,
                      delta_weight=weight)


def upper_from(y: int, N: int, B: int, table: Mapping[int, int], mcf: int, item_bits: int = 1,
               delta_weight: int = 1) -> int:
    b = BoundsInput(y=y, n2=0, d=1, r=1, N=N, B=B, mincut=1, st_table=table, mcf_rounds=mcf,
                    item_bits=item_bits, delta_weight=delta_weight)
    return upper_bound_bcq(b)


def bounds_input(q: FaqQuery, t: Topology, B: int) -> BoundsInput:
    """Structural parameters of ``q`` with the topology's cut and packing table."""
    h = q.hypergraph
    cf = core_forest(h)
    cut = min_cut(t).value if len(t.terminals) > 1 else 0
    table = st_table(t) if len(t.terminals) > 1 else {0: 1}
    return BoundsInput(y=internal_node_width(h).y, n2=cf.n2, d=max(1, degeneracy(h)), r=h.r,
                       N=max(q.N, 1), B=B, mincut=cut, st_table=table)


# --------------------------------------------------------------------------- TRIBES


@dataclass(frozen=True)
class TribesInstance:
    m: int
    N: int
    pairs: tuple[tuple[frozenset[int], frozenset[int]], ...]

    @property
    def value(self) -> bool:
        """True iff every pair intersects."""
        return all(s & t for s, t in self.pairs)


def gen_tribes(m: int, N: int, seed: int, hard: bool = True) -> TribesInstance:
    """Random pairs over [0, N).

    In hard mode every pair meets in at most one element, and each pair
    intersects with probability 2^(-1/m), so the conjunction is a fair coin.
    """
    if m < 1 or N < 1:
        raise SchemaError("m and N must be positive")
    rng = random.Random(seed)
    p_meet = 2 ** (-1 / m)
    pairs = []
    for _ in range(m):
        if hard:
            universe = list(range(N))
            rng.shuffle(universe)
            meet = rng.random() < p_meet
            common = {universe[0]} if meet else set()
            rest = universe[1:] if meet or N == 1 else universe
            s_only = {x for x in rest if rng.random() < 0.5}
            t_only = {x for x in rest if x not in s_only and rng.random() < 0.5}
            # empty sides would let a protocol answer without looking across the cut
            if not meet and not s_only and rest:
                s_only = {rest[0]}
                t_only.discard(rest[0])
            if not meet and not t_only and len(rest) > 1:
                free = [x for x in rest if x not in s_only] or [rest[-1]]
                s_only.discard(free[0])
                t_only = {free[0]}
            pairs.append((frozenset(common | s_only), frozenset(common | t_only)))
        else:
            pairs.append((frozenset(x for x in range(N) if rng.random() < 0.5),
                          frozenset(x for x in range(N) if rng.random() < 0.5)))
    return TribesInstance(m, N, tuple(pairs))


@dataclass
class HardInstance:
    query: FaqQuery
    tribes: TribesInstance
    kind: str
    s_edges: tuple[str, ...]
    t_edges: tuple[str, ...]
    assignment: Assignment | None = None
    notes: list[str] = field(default_factory=list)


def _bool_relation(h: Hypergraph, e: str, rows) -> Relation:
    verts = h.edges[e]
    return Relation.from_rows(verts, [h.domains[v] for v in verts], sorted(set(rows)), BOOLEAN)


def _embed_picks(h: Hypergraph, tr: TribesInstance, picks: Sequence[tuple[str, str, str]],
                 kind: str) -> HardInstance:
    """Each pick (p, eS, eT) carries one pair on vertex p; p gets domain N, unpicked vertices domain 1."""
    chosen = {p for p, _, _ in picks}
    for e, verts in h.edges.items():
        if len(chosen & set(verts)) > 1:
            raise IncompatibleInputError(f"edge {e} holds two embedding vertices")
    domains = {v: (tr.N if v in chosen else 1) for v in h.vertices}
    hh = h.with_domains(domains)
    role: dict[str, frozenset[int]] = {}
    for i, (p, es, et) in enumerate(picks):
        role[es] = tr.pairs[i][0]
        role[et] = tr.pairs[i][1]
    rels = {}
    for e, verts in hh.edges.items():
        pv = next((v for v in verts if v in chosen), None)
        values = role.get(e, range(tr.N)) if pv is not None else [0]
        rows = [tuple(x if v == pv else 0 for v in verts) for x in values]
        rels[e] = _bool_relation(hh, e, rows)
    q = FaqQuery(hh, rels, (), BOOLEAN)
    return HardInstance(q, tr, kind, tuple(es for _, es, _ in picks), tuple(et for _, _, et in picks))


def _pick_for(h: Hypergraph, p: str) -> tuple[str, str, str]:
    inc = h.incident(p)
    return p, inc[0], inc[-1]


def default_m(h: Hypergraph, kind: str) -> int:
    if kind == "forest":
        return max(1, internal_node_width(h).y // 2)
    if kind == "hypergraph":
        return max(1, internal_node_width(h).y // max(h.r, 1))
    n2 = core_forest(h).n2
    return max(1, int(n2 // (2 * math.log2(n2)))) if n2 > 1 else 1


def embed_forest(h: Hypergraph, tr: TribesInstance) -> HardInstance:
    """Pairs on same-colour forest nodes of degree at least two."""
    if not h.is_binary() or not is_acyclic(h):
        raise IncompatibleInputError("forest embedding needs an acyclic binary hypergraph")
    g = nx.Graph()
    g.add_nodes_from(h.vertices)
    for verts in h.edges.values():
        if len(verts) == 2:
            g.add_edge(*verts)
    colour = {}
    for comp in nx.connected_components(g):
        start = min(comp, key=h.vertices.index)
        for v, dist in nx.single_source_shortest_path_length(g, start).items():
            colour[v] = dist % 2
    sides = [[v for v in h.vertices if colour[v] == c and h.degree(v) >= 2] for c in (0, 1)]
    side = max(sides, key=len)
    if len(side) < tr.m:
        raise IncompatibleInputError(f"forest has {len(side)} usable nodes, m = {tr.m}")
    return _embed_picks(h, tr, [_pick_for(h, p) for p in side[: tr.m]], "forest")


def _core_graph(h: Hypergraph) -> nx.Graph:
    cf = core_forest(h)
    g = nx.Graph()
    g.add_nodes_from(cf.core_vertices)
    for e in cf.core_edges:
        verts = h.edges[e]
        if len(verts) == 2:
            g.add_edge(*verts)
    return g


def moore_cycle_bound(n: int, p: int) -> float:
    """Length guarantee 2 log2 n / log2(p/n - 1) for a graph with p > 2n edges."""
    return 2 * math.log2(n) / math.log2(p / n - 1)


def _disjoint_cycles(g: nx.Graph, order: Sequence[str], want: int) -> list[list[str]]:
    g = g.copy()
    cycles = []
    while len(cycles) < want:
        best = None
        for u, v in sorted(g.edges, key=lambda e: (order.index(e[0]), order.index(e[1]))):
            g.remove_edge(u, v)
            try:
                path = nx.shortest_path(g, v, u)
            except nx.NetworkXNoPath:
                path = None
            g.add_edge(u, v)
            if path is not None and (best is None or len(path) < len(best)):
                best = [u] + path[:-1]
        if best is None:
            break
        cycles.append(best)
        g.remove_nodes_from(best)
    return cycles


def _largest_square(n: int) -> int:
    return math.isqrt(n) ** 2


def _shrink(tr: TribesInstance, size: int) -> TribesInstance:
    return TribesInstance(tr.m, size, tuple((frozenset(x for x in s if x < size),
                                             frozenset(x for x in t if x < size)) for s, t in tr.pairs))


def _embed_cycles(h: Hypergraph, tr: TribesInstance) -> HardInstance:
    if not h.is_binary():
        raise IncompatibleInputError("cycle embedding needs binary hyperedges")
    notes = []
    if _largest_square(tr.N) != tr.N:
        size = _largest_square(tr.N)
        notes.append(f"N = {tr.N} is not a square; shrunk to {size}")
        tr = _shrink(tr, size)
    root = math.isqrt(tr.N)
    g = _core_graph(h)
    cycles = _disjoint_cycles(g, h.vertices, tr.m)
    if len(cycles) < tr.m:
        raise IncompatibleInputError(f"core has {len(cycles)} disjoint cycles, m = {tr.m}")
    on_cycle = {v for c in cycles for v in c}
    domains = {v: (root if v in on_cycle else 1) for v in h.vertices}
    hh = h.with_domains(domains)
    special: dict[str, list[dict[str, int]]] = {}
    s_edges, t_edges = [], []
    used_pairs = set()
    for i, cyc in enumerate(cycles):
        s_set, t_set = tr.pairs[i]
        length = len(cyc)
        arcs = [(cyc[j], cyc[(j + 1) % length]) for j in range(length)]
        for j, (u, v) in enumerate(arcs):
            e = next(e for e, vs in hh.edges.items() if set(vs) == {u, v} and e not in used_pairs)
            used_pairs.add(e)
            if j == 0:
                special[e] = [{u: x // root, v: x % root} for x in sorted(s_set)]
                s_edges.append(e)
            elif j == 1:
                # same split as the S edge, read through the shared vertex cyc[1]
                special[e] = [{u: x % root, v: x // root} for x in sorted(t_set)]
                t_edges.append(e)
            else:
                special[e] = [{u: a, v: a} for a in range(root)]
    rels = {}
    for e, verts in hh.edges.items():
        if e in special:
            rows = [tuple(asg[v] for v in verts) for asg in special[e]]
        else:
            rows = [tuple(combo) for combo in _product([range(hh.domains[v]) for v in verts])]
        rels[e] = _bool_relation(hh, e, rows)
    inst = HardInstance(FaqQuery(hh, rels, (), BOOLEAN), tr, "cycle", tuple(s_edges), tuple(t_edges))
    inst.notes.extend(notes)
    inst.notes.append("cycle lengths " + ",".join(str(len(c)) for c in cycles))
    return inst


def _product(ranges):
    out = [()]
    for r in ranges:
        out = [x + (v,) for x in out for v in r]
    return out


def _embed_independent(h: Hypergraph, tr: TribesInstance, among: Sequence[str], kind: str) -> HardInstance:
    cands = [v for v in among if h.degree(v) >= 2]
    chosen = strong_independent_set(h, among=cands)
    if len(chosen) < tr.m:
        raise IncompatibleInputError(f"found {len(chosen)} independent embedding vertices, m = {tr.m}")
    return _embed_picks(h, tr, [_pick_for(h, p) for p in chosen[: tr.m]], kind)


def embed_core(h: Hypergraph, tr: TribesInstance, mode: str = "auto") -> HardInstance:
    """Cycle embedding on a dense core, independent-set embedding otherwise."""
    cf = core_forest(h)
    if not cf.core_vertices:
        raise IncompatibleInputError("empty core")
    if mode == "auto":
        g = _core_graph(h)
        avg = 2 * g.number_of_edges() / max(g.number_of_nodes(), 1)
        mode = "cycle" if avg > DENSE_CORE_DEGREE else "independent-set"
    if mode == "cycle":
        return _embed_cycles(h, tr)
    if mode == "independent-set":
        return _embed_independent(h, tr, cf.core_vertices, "independent-set")
    raise SchemaError(f"unknown core embedding mode {mode!r}")


def embed_hypergraph(h: Hypergraph, ghd: Ghd, tr: TribesInstance) -> HardInstance:
    """Pairs on private attributes of internal decomposition nodes."""
    cands: list[str] = []
    for u in ghd.order:
        if not ghd.children(u):
            continue
        for v in h.vertices:
            if v in private_attributes(ghd, u) and v not in cands:
                cands.append(v)
    return _embed_independent(h, tr, cands, "hypergraph")


def embed(h: Hypergraph, tr: TribesInstance, kind: str) -> HardInstance:
    if kind == "forest":
        return embed_forest(h, tr)
    if kind in ("cycle", "independent-set"):
        return embed_core(h, tr, mode=kind)
    if kind == "hypergraph":
        return embed_hypergraph(h, md_ghd(internal_node_width(h).witness), tr)
    raise SchemaError(f"unknown embedding kind {kind!r}")


def split_by_cut(t: Topology, edges: Sequence[str], s_edges: Sequence[str] = (),
                 t_edges: Sequence[str] = ()) -> Assignment:
    """Place relations across a minimum cut: S relations first on side A, T relations last on side B.

    The first max(ceil(k/2), |S|) relations in the order S, padding, T go
    round-robin to side A's terminals and the rest to side B's.
    """
    if len(t.terminals) < 2:
        raise IncompatibleInputError("a cut needs at least two terminals")
    cut = min_cut(t)
    side_a = [k for k in t.terminals if k in cut.side_a]
    side_b = [k for k in t.terminals if k in cut.side_b]
    if not side_a or not side_b:
        raise IncompatibleInputError("cut does not separate the terminals")
    padding = [e for e in edges if e not in s_edges and e not in t_edges]
    ordered = list(s_edges) + padding + list(t_edges)
    n_a = min(max(math.ceil(len(ordered) / 2), len(s_edges)), len(ordered) - len(t_edges))
    placement = {}
    for i, e in enumerate(ordered):
        if i < n_a:
            placement[e] = side_a[i % len(side_a)]
        else:
            placement[e] = side_b[(i - n_a) % len(side_b)]
    return Assignment(placement, side_a[0])


def cut_assignment(t: Topology, inst: HardInstance) -> Assignment:
    """S relations on one side of a minimum cut, T relations on the other."""
    a = split_by_cut(t, list(inst.query.hypergraph.edges), inst.s_edges, inst.t_edges)
    inst.assignment = a
    return a


# --------------------------------------------------------------------------- reporting


REPORT_COLUMNS = ("query", "topology", "y", "n2", "d", "r", "N", "mincut", "upper", "lower",
                  "measured", "protocol", "ratio_up", "ratio_low")


def gap_report(q: FaqQuery, t: Topology, measured: int, protocol: str, upper: int,
               query_name: str = "", topology_name: str = "", B: int | None = None) -> dict:
    """One report row: structural parameters, both formulas and the measured rounds."""
    b = bounds_input(q, t, B or 1)
    lower = lower_bound_bcq(b) if b.mincut > 0 else 0
    return {
        "query": query_name, "topology": topology_name, "y": b.y, "n2": b.n2, "d": b.d, "r": b.r,
        "N": b.N, "mincut": b.mincut, "upper": upper, "lower": lower, "measured": measured,
        "protocol": protocol,
        "ratio_up": round(measured / upper, 4) if upper else 0.0,
        "ratio_low": round(measured / lower, 4) if lower else 0.0,
    }
