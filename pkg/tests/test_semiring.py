import itertools
import math
import random

import pytest
from hypothesis import given, settings, strategies as st

from faqnet.errors import ParseError, SchemaError
from faqnet.hypergraph import Hypergraph
from faqnet.semiring import (
    BOOLEAN, COUNTING, COUNTING_MAX, F2, MIN_PLUS, SEMIRINGS, FaqQuery, Relation, bits_for_domain,
    eval_faq_bruteforce, eval_faq_centralized, format_rel, get_semiring, is_saturated, join, parse_rel,
    project_aggregate, reorder, same_function, semijoin,
)

import corpus


def rel(attrs, domains, items, s=BOOLEAN):
    return Relation.build(attrs, domains, items, s)


@pytest.mark.parametrize("name", sorted(SEMIRINGS))
def test_laws_on_sampled_triples(name):
    s = SEMIRINGS[name]
    rng = random.Random(7)
    for _ in range(300):
        a, b, c = s.sample(rng), s.sample(rng), s.sample(rng)
        assert s.add(a, b) == s.add(b, a)
        assert s.mul(a, b) == s.mul(b, a)
        assert s.add(s.add(a, b), c) == s.add(a, s.add(b, c))
        assert s.mul(s.mul(a, b), c) == s.mul(a, s.mul(b, c))
        assert s.mul(a, s.add(b, c)) == s.add(s.mul(a, b), s.mul(a, c))
        assert s.add(a, s.zero) == a
        assert s.mul(a, s.one) == a
        assert s.mul(a, s.zero) == s.zero


def test_counting_saturates_instead_of_wrapping():
    assert COUNTING.mul(2**40, 2**40) == COUNTING_MAX
    assert COUNTING.add(COUNTING_MAX, 5) == COUNTING_MAX
    assert is_saturated(COUNTING, COUNTING.mul(2**33, 2**33))
    assert not is_saturated(COUNTING, 12)


def test_min_plus_identities():
    assert MIN_PLUS.zero == math.inf and MIN_PLUS.one == 0
    assert MIN_PLUS.mul(3, 4) == 7
    assert MIN_PLUS.add(3, 4) == 3
    assert MIN_PLUS.mul(math.inf, 4) == math.inf


def test_f2_addition_is_xor():
    assert F2.add(1, 1) == 0
    assert F2.sum([1, 1, 1]) == 1


def test_get_semiring_rejects_unknown():
    with pytest.raises(SchemaError):
        get_semiring("tropical-max")


@pytest.mark.parametrize("size,bits", [(1, 1), (2, 1), (3, 2), (4, 2), (5, 3), (256, 8), (257, 9)])
def test_bits_for_domain(size, bits):
    assert bits_for_domain(size) == bits


def test_build_drops_zeros_and_rejects_duplicates():
    r = rel(("A",), (3,), [((0,), 1), ((1,), 0)])
    assert r.rows == [(0,)]
    with pytest.raises(SchemaError):
        rel(("A",), (3,), [((0,), 1), ((0,), 1)])
    with pytest.raises(SchemaError):
        rel(("A",), (3,), [((3,), 1)])


def test_join_matches_hand_computed_counts():
    r = rel(("A", "B"), (2, 2), [((0, 0), 2), ((0, 1), 3), ((1, 1), 5)], COUNTING)
    s = rel(("B", "C"), (2, 2), [((0, 1), 7), ((1, 0), 11)], COUNTING)
    j = join(r, s, COUNTING)
    assert j.attrs == ("A", "B", "C")
    assert j.as_dict() == {(0, 0, 1): 14, (0, 1, 0): 33, (1, 1, 0): 55}
    assert project_aggregate(j, ["A"], COUNTING).as_dict() == {(0,): 47, (1,): 55}
    assert project_aggregate(j, [], COUNTING).scalar_value(COUNTING) == 102


def test_semijoin_filters_on_shared_attributes():
    r = rel(("A", "B"), (3, 2), [((0, 0), 1), ((1, 1), 1), ((2, 0), 1)])
    s = rel(("A",), (3,), [((1,), 1), ((2,), 1)])
    assert semijoin(r, s).rows == [(1, 1), (2, 0)]


def test_join_rejects_domain_mismatch():
    with pytest.raises(SchemaError):
        join(rel(("A",), (2,), []), rel(("A",), (3,), []), BOOLEAN)


def test_reorder_and_same_function():
    r = rel(("A", "B"), (2, 3), [((0, 2), 1), ((1, 0), 1)])
    back = reorder(r, ("B", "A"))
    assert back.rows == [(0, 1), (2, 0)]
    assert same_function(r, back)


def test_min_plus_shortest_two_hop_path():
    # independent check: all two-hop paths from 0 to 2 through B
    r = rel(("A", "B"), (3, 3), [((0, 1), 4), ((0, 2), 9)], MIN_PLUS)
    s = rel(("B", "C"), (3, 3), [((1, 2), 3), ((2, 2), 0)], MIN_PLUS)
    out = project_aggregate(join(r, s, MIN_PLUS), ["A", "C"], MIN_PLUS)
    assert out.as_dict() == {(0, 2): 7}


def test_rel_format_round_trip_and_errors():
    r = rel(("A", "B"), (2, 3), [((0, 2), 5), ((1, 0), 7)], COUNTING)
    text = format_rel(r, COUNTING)
    assert text == "A B\n2 3\n0,2|5\n1,0|7\n"
    assert parse_rel(text, COUNTING) == r
    with pytest.raises(ParseError) as exc:
        parse_rel("A B\n2 3\n0,1|1\n0,1 1\n", COUNTING)
    assert exc.value.line == 4
    with pytest.raises(ParseError) as exc:
        parse_rel("A\n2\nx|1\n", BOOLEAN)
    assert exc.value.line == 3
    with pytest.raises(ParseError):
        parse_rel("A\n2\n0|1\n0|1\n", BOOLEAN)


def test_min_plus_rel_round_trips_infinity_free_values():
    r = rel(("A",), (3,), [((0,), 0), ((2,), 12)], MIN_PLUS)
    assert parse_rel(format_rel(r, MIN_PLUS), MIN_PLUS) == r


def test_query_normalises_attribute_and_free_order():
    h = Hypergraph({"A": 2, "B": 2}, {"e1": ("A", "B")})
    r = rel(("B", "A"), (2, 2), [((1, 0), 1)])
    q = FaqQuery(h, {"e1": r}, ("B", "A"), BOOLEAN)
    assert q.relations["e1"].attrs == ("A", "B")
    assert q.free_vars == ("A", "B")
    with pytest.raises(SchemaError):
        FaqQuery(h, {}, (), BOOLEAN)


def test_bruteforce_counts_triangles_by_enumeration():
    # K3 with every edge complete over [2]: every assignment is a triangle, 8 in total
    h = Hypergraph({"A": 2, "B": 2, "C": 2}, {"e1": ("A", "B"), "e2": ("B", "C"), "e3": ("A", "C")})
    full = [((a, b), 1) for a in range(2) for b in range(2)]
    rels = {e: rel(h.edges[e], (2, 2), full, COUNTING) for e in h.edges}
    q = FaqQuery(h, rels, (), COUNTING)
    assert eval_faq_bruteforce(q).scalar_value(COUNTING) == 8
    assert eval_faq_centralized(q).scalar_value(COUNTING) == 8


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_centralized_matches_bruteforce(seed):
    rng = random.Random(seed)
    h = corpus.random_hypergraph(rng, max_vars=6, max_edges=5)
    s = corpus.random_semiring(rng)
    free = [v for v in h.vertices if rng.random() < 0.3]
    q = corpus.random_query(rng, h, s, free)
    assert same_function(eval_faq_centralized(q), eval_faq_bruteforce(q))


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6))
def test_join_agrees_with_nested_loop(seed):
    rng = random.Random(seed)
    s = corpus.random_semiring(rng)
    doms = {"A": rng.randint(1, 3), "B": rng.randint(1, 3), "C": rng.randint(1, 3)}
    r = corpus._relation(rng, ("A", "B"), doms, s)
    q = corpus._relation(rng, ("B", "C"), doms, s)
    expect = {}
    for (ra, rv), (qa, qv) in itertools.product(r.entries, q.entries):
        if ra[1] == qa[0]:
            v = s.mul(rv, qv)
            if not s.is_zero(v):
                expect[(ra[0], ra[1], qa[1])] = v
    assert join(r, q, s).as_dict() == expect
