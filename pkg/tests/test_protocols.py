import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from faqnet import protocols as P
from faqnet.errors import IncompatibleInputError
from faqnet.hypergraph import Ghd, Hypergraph
from faqnet.semiring import (
    BOOLEAN, COUNTING, COUNTING_MAX, FaqQuery, Relation, eval_faq_bruteforce, same_function,
)
from faqnet.simulator import trace_problems
from faqnet.topology import Assignment, Topology, clique_topology, line_topology

import corpus

PLAYERS = ["P1", "P2", "P3", "P4"]
G1 = line_topology(PLAYERS)
G2 = clique_topology(PLAYERS)
SPLIT_ROUTES = [[("P1", "P2"), ("P3", "P4"), ("P4", "P2")], [("P4", "P1"), ("P1", "P3"), ("P3", "P2")]]


def unary_query(N):
    h = Hypergraph({"A": N}, {e: ("A",) for e in "RSTU"})
    rels = {e: Relation.from_rows(("A",), (N,), [(i,) for i in range(N)], BOOLEAN) for e in h.edges}
    return FaqQuery(h, rels, (), BOOLEAN)


def binary_star_query(N, rows=None):
    h = Hypergraph({"A": N, "B": 2, "C": 2, "D": 2, "E": 2},
                   {"R": ("A", "B"), "S": ("A", "C"), "T": ("A", "D"), "U": ("A", "E")})
    rows = rows or {}
    rels = {e: Relation.from_rows(h.edges[e], (N, 2), rows.get(e, [(i, 1) for i in range(N)]), BOOLEAN)
            for e in h.edges}
    return FaqQuery(h, rels, (), BOOLEAN)


ONE_EACH = Assignment({"R": "P1", "S": "P2", "T": "P3", "U": "P4"}, "P4")


@pytest.mark.parametrize("N", [8, 32, 128])
def test_unary_pipeline_on_a_line_takes_n_plus_2(N):
    res = P.line_pipeline_bcq(unary_query(N), G1, ONE_EACH)
    assert res.rounds == N + 2
    assert res.answer.scalar_value(BOOLEAN) == 1
    assert trace_problems(res.trace, G1) == []


@pytest.mark.parametrize("N", [8, 32])
def test_binary_star_pipeline_on_a_line_takes_n_plus_2(N):
    assert P.line_pipeline_bcq(binary_star_query(N), G1, ONE_EACH).rounds == N + 2


@pytest.mark.parametrize("N", [8, 32])
def test_two_route_split_on_the_clique_halves_the_rounds(N):
    a = Assignment({"R": "P1", "S": "P2", "T": "P3", "U": "P4"}, "P2")
    res = P.line_pipeline_bcq(binary_star_query(N), G2, a, routes=SPLIT_ROUTES)
    assert res.rounds == math.ceil(N / 2) + 2
    assert trace_problems(res.trace, G2) == []


def test_pipeline_filters_to_the_intersection():
    N = 16
    rows = {"R": [(i, 0) for i in range(0, 16, 2)], "U": [(i, 1) for i in range(0, 16, 3)]}
    q = binary_star_query(N, rows)
    res = P.line_pipeline_bcq(q, G1, ONE_EACH)
    assert res.answer.scalar_value(BOOLEAN) == 1
    assert res.notes[-1] == "surviving join values: 3"
    rows["U"] = [(1, 1)]
    assert P.line_pipeline_bcq(binary_star_query(N, rows), G1, ONE_EACH).answer.scalar_value(BOOLEAN) == 0


def test_pipeline_rejects_bad_inputs():
    q = binary_star_query(8)
    with pytest.raises(IncompatibleInputError):
        P.line_pipeline_bcq(q, G2, ONE_EACH)
    with pytest.raises(IncompatibleInputError):
        P.line_pipeline_bcq(q, G2, ONE_EACH, routes=[[("P1", "P3")]])
    with pytest.raises(IncompatibleInputError):
        P.line_pipeline_bcq(q, G2, ONE_EACH, routes=[[("P1", "P4"), ("P2", "P4"), ("P3", "P4")],
                                                    [("P1", "P4")]])
    path = Hypergraph({"A": 2, "B": 2, "C": 2}, {"R": ("A", "B"), "S": ("B", "C")})
    pq = FaqQuery(path, {e: Relation.from_rows(path.edges[e], (2, 2), [], BOOLEAN) for e in path.edges},
                  (), BOOLEAN)
    with pytest.raises(IncompatibleInputError):
        P.line_pipeline_bcq(pq, G1, Assignment({"R": "P1", "S": "P2"}, "P2"))


def _run(name, q, t, a, kw, seed=0):
    if name == "split_star_faq":
        fam = P.consistent_hash_family(kw["ghd"], t.terminals, seed)
        return P.split_star_faq(q, t, fam, a.answer_player)
    fn = {"trivial": P.trivial_protocol, "star_bcq": P.star_bcq, "forest_bcq": P.forest_bcq,
          "general_bcq": P.general_bcq, "star_faq": P.star_faq, "faq_ss": P.faq_ss}[name]
    return fn(q, t, a, **kw)


PROTOCOLS = ["trivial", "star_bcq", "forest_bcq", "general_bcq", "star_faq", "faq_ss", "split_star_faq"]


@pytest.mark.parametrize("name", PROTOCOLS)
def test_protocol_matches_bruteforce_on_seeded_instances(name):
    answers = set()
    for seed in range(1000, 1030):
        q, t, a, kw = corpus.instance_for(name, seed)
        res = _run(name, q, t, a, kw, seed)
        oracle = eval_faq_bruteforce(q)
        assert same_function(res.answer, oracle), (name, seed)
        assert trace_problems(res.trace, t) == []
        assert res.rounds <= res.constant * res.bound_estimate
        answers.add(bool(oracle.entries))
    assert answers == {True, False}


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6), st.sampled_from(PROTOCOLS))
def test_half_duplex_gives_same_answer_and_no_fewer_rounds(seed, name):
    q, t, a, kw = corpus.instance_for(name, seed)
    if name == "split_star_faq":
        return
    full = _run(name, q, t, a, kw)
    half = _run(name, q, t, a, {**kw, "duplex": "half"})
    assert same_function(full.answer, half.answer)
    assert half.rounds >= full.rounds
    assert trace_problems(half.trace, t) == []


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 10**6))
def test_relabelling_players_changes_nothing(seed):
    q, t, a, kw = corpus.instance_for("faq_ss", seed)
    mapping = {n: f"node_{n}" for n in t.nodes}
    before = P.faq_ss(q, t, a)
    after = P.faq_ss(q, t.relabel(mapping), a.relabel(mapping))
    assert before.rounds == after.rounds
    assert same_function(before.answer, after.answer)


def test_capacity_override_scales_rounds():
    q = binary_star_query(32)
    a = Assignment({"R": "P1", "S": "P2", "T": "P3", "U": "P4"}, "P2")
    narrow = P.star_bcq(q, G2, a, capacity_bits=1)
    wide = P.star_bcq(q, G2, a, capacity_bits=12)
    assert narrow.rounds > wide.rounds
    assert trace_problems(narrow.trace, G2) == []


def test_single_player_needs_no_rounds():
    t = Topology(("solo",), (), ("solo",))
    q = binary_star_query(8)
    a = Assignment({e: "solo" for e in "RSTU"}, "solo")
    for fn in (P.trivial_protocol, P.star_bcq, P.general_bcq, P.faq_ss):
        res = fn(q, t, a)
        assert res.rounds == 0
        assert res.answer.scalar_value(BOOLEAN) == 1


def test_shape_checks():
    tri = Hypergraph({v: 2 for v in "ABC"}, {"e1": ("A", "B"), "e2": ("B", "C"), "e3": ("A", "C")})
    full = [(x, y) for x in range(2) for y in range(2)]
    q = FaqQuery(tri, {e: Relation.from_rows(tri.edges[e], (2, 2), full, BOOLEAN) for e in tri.edges},
                 (), BOOLEAN)
    a = Assignment({"e1": "P1", "e2": "P2", "e3": "P3"}, "P1")
    with pytest.raises(IncompatibleInputError):
        P.star_bcq(q, G2, a)
    with pytest.raises(IncompatibleInputError):
        P.forest_bcq(q, G2, a)
    assert P.general_bcq(q, G2, a).answer.scalar_value(BOOLEAN) == 1
    counting = FaqQuery(tri, {e: Relation.from_rows(tri.edges[e], (2, 2), full, COUNTING) for e in tri.edges},
                        (), COUNTING)
    with pytest.raises(IncompatibleInputError):
        P.general_bcq(counting, G2, a)
    assert P.faq_ss(counting, G2, a).answer.scalar_value(COUNTING) == 8


def test_free_variables_outside_the_core_are_rejected():
    h = Hypergraph({v: 2 for v in "ABCD"}, {"e1": ("A", "B"), "e2": ("B", "C"), "e3": ("C", "D")})
    rels = {e: Relation.from_rows(h.edges[e], (2, 2), [(0, 0)], COUNTING) for e in h.edges}
    q = FaqQuery(h, rels, ("D",), COUNTING)
    a = Assignment({e: "P1" for e in h.edges}, "P1")
    with pytest.raises(IncompatibleInputError):
        P.faq_ss(q, G1, a)


def test_star_faq_rejects_non_star_decomposition():
    h = Hypergraph({v: 2 for v in "ABCD"}, {"e1": ("A", "B"), "e2": ("B", "C"), "e3": ("C", "D")})
    rels = {e: Relation.from_rows(h.edges[e], (2, 2), [(0, 0)], BOOLEAN) for e in h.edges}
    q = FaqQuery(h, rels, (), BOOLEAN)
    chain = Ghd("e1", {"e1": None, "e2": "e1", "e3": "e2"},
                {e: frozenset(v) for e, v in h.edges.items()}, {e: frozenset([e]) for e in h.edges})
    with pytest.raises(IncompatibleInputError):
        P.star_faq(q, G1, Assignment({e: "P1" for e in h.edges}, "P1"), ghd=chain)


def test_counting_saturation_is_reported():
    h = Hypergraph({"A": 2, "B": 2}, {"R": ("A",), "S": ("A", "B")})
    q = FaqQuery(h, {"R": Relation.build(("A",), (2,), [((0,), 2**40)], COUNTING),
                     "S": Relation.build(("A", "B"), (2, 2), [((0, 0), 2**40), ((0, 1), 3)], COUNTING)},
                 (), COUNTING)
    res = P.faq_ss(q, G1, Assignment({"R": "P1", "S": "P4"}, "P2"))
    assert res.answer.scalar_value(COUNTING) == COUNTING_MAX
    assert any("saturated" in n for n in res.notes)


def test_set_intersection():
    rng = random.Random(3)
    L = 40
    vecs = {p: [int(rng.random() < 0.8) for _ in range(L)] for p in PLAYERS}
    res = P.set_intersection_protocol(vecs, G2, "P2", capacity_bits=2)
    expect = tuple(int(all(vecs[p][i] for p in PLAYERS)) for i in range(L))
    assert res.answer == expect
    assert trace_problems(res.trace, G2) == []
    assert res.rounds <= res.constant * res.bound_estimate
    with pytest.raises(IncompatibleInputError):
        P.set_intersection_protocol({"P1": [1], "P2": [1, 0]}, G2, "P1")


def test_consistent_hash_keeps_interface_groups_together():
    for seed in range(20):
        q, t, a, kw = corpus.instance_for("split_star_faq", seed)
        fam = P.consistent_hash_family(kw["ghd"], t.terminals, seed)
        assert fam.problems(q) == []
        shards = fam.split(q)
        for e, rel in q.relations.items():
            merged = sorted(x for p in shards for x in shards[p][e].entries)
            assert merged == list(rel.entries)


def test_split_star_needs_every_leaf_to_contribute():
    # leaf U has no tuple with A = 1, so only A = 0 survives even though R, S, T all hold A = 1
    h = Hypergraph({"A": 2, "B": 2, "C": 2, "D": 2}, {"R": ("A", "B"), "S": ("A", "C"), "U": ("A", "D")})
    rows = {"R": [(0, 0), (1, 0)], "S": [(0, 1), (1, 1)], "U": [(0, 0)]}
    q = FaqQuery(h, {e: Relation.from_rows(h.edges[e], (2, 2), rows[e], COUNTING) for e in h.edges},
                 ("A",), COUNTING)
    ghd = P.star_ghd(h)
    fam = P.consistent_hash_family(ghd, G2.terminals, seed=5)
    res = P.split_star_faq(q, G2, fam, "P3")
    assert res.answer.as_dict() == {(0,): 1}


def _matmul_naive(a, b, n):
    out = []
    for i in range(n):
        row = 0
        for j in range(n):
            bit = 0
            for k in range(n):
                bit ^= (a[i] >> k & 1) & (b[k] >> j & 1)
            row |= bit << j
        out.append(row)
    return out


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**6))
def test_f2_matmul_matches_triple_loop(seed):
    rng = random.Random(seed)
    n = rng.randint(1, 6)
    a = [rng.getrandbits(n) for _ in range(n)]
    b = [rng.getrandbits(n) for _ in range(n)]
    assert P.f2_matmul(a, b) == _matmul_naive(a, b, n)


@pytest.mark.parametrize("k", [1, 2, 3, 5, 8])
def test_matrix_chain_variants_agree_with_direct_product(k):
    x, mats = P.random_f2_chain(k, 5, seed=k)
    t = line_topology([f"P{i}" for i in range(k + 2)])
    direct = P.f2_chain_direct(x, mats)
    for fn in (P.matrix_chain, P.matrix_chain_merge):
        res = fn(x, mats, t)
        assert res.answer == direct
        assert trace_problems(res.trace, t) == []
        assert res.rounds <= res.constant * res.bound_estimate


def test_identity_chain_returns_input():
    t = line_topology([f"P{i}" for i in range(6)])
    res = P.matrix_chain(0b1011, [P.f2_identity(4)] * 4, t, capacity_bits=2)
    assert res.answer == 0b1011
    # four hops of 2-bit pieces plus the final hop to the last player
    assert res.rounds == 5 * 2


def test_matrix_chain_needs_a_line_of_the_right_length():
    with pytest.raises(IncompatibleInputError):
        P.matrix_chain(1, [[1]], line_topology(["a", "b"]))
