"""The ten acceptance criteria, one test each.  Every test prints a PASS or FAIL line."""

import math
import random
import time

import pytest

from faqnet import bounds as Bd
from faqnet import protocols as P
from faqnet.errors import IncompatibleInputError
from faqnet.hypergraph import Hypergraph, ghd_problems, gyo_reduce, internal_node_width, is_valid_ghd
from faqnet.semiring import BOOLEAN, SEMIRINGS, FaqQuery, Relation, eval_faq_bruteforce, same_function
from faqnet.simulator import verify_trace
from faqnet.topology import Assignment, clique_topology, line_topology

import corpus

PLAYERS = ["P1", "P2", "P3", "P4"]
G1 = line_topology(PLAYERS)
G2 = clique_topology(PLAYERS)
PROTOCOLS = ["trivial", "star_bcq", "forest_bcq", "general_bcq", "star_faq", "faq_ss", "split_star_faq"]
KINDS = ["forest", "cycle", "independent-set", "hypergraph"]


@pytest.fixture
def report(capsys):
    def emit(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\ncriterion {number} {title}: {'PASS' if ok else 'FAIL'}{'  ' + detail if detail else ''}")
        assert ok, detail
    return emit


def _star(N, arity):
    names = ["A", "B", "C", "D", "E"]
    if arity == 1:
        h = Hypergraph({"A": N}, {e: ("A",) for e in "RSTU"})
    else:
        h = Hypergraph({"A": N, **{v: 2 for v in names[1:]}},
                       {e: ("A", v) for e, v in zip("RSTU", names[1:])})
    rels = {e: Relation.from_rows(vs, [h.domains[v] for v in vs], [(i,) + (1,) * (len(vs) - 1) for i in range(N)],
                                  BOOLEAN) for e, vs in h.edges.items()}
    return FaqQuery(h, rels, (), BOOLEAN)


def _run(name, q, t, a, kw, seed=0):
    if name == "split_star_faq":
        return P.split_star_faq(q, t, P.consistent_hash_family(kw["ghd"], t.terminals, seed), a.answer_player)
    fn = {"trivial": P.trivial_protocol, "star_bcq": P.star_bcq, "forest_bcq": P.forest_bcq,
          "general_bcq": P.general_bcq, "star_faq": P.star_faq, "faq_ss": P.faq_ss}[name]
    return fn(q, t, a, **kw)


def _corpus_runs():
    """Every protocol on 100 seeded instances: (name, seed, query, topology, result)."""
    runs = []
    for name in PROTOCOLS:
        for seed in range(100):
            q, t, a, kw = corpus.instance_for(name, seed)
            runs.append((name, seed, q, t, _run(name, q, t, a, kw, seed)))
    return runs


_CACHE = {}


def corpus_runs():
    if "runs" not in _CACHE:
        start = time.perf_counter()
        _CACHE["runs"] = _corpus_runs()
        _CACHE["seconds"] = time.perf_counter() - start
    return _CACHE["runs"], _CACHE["seconds"]


def _hard_instance(kind, seed):
    rng = random.Random(seed)
    h = corpus.hard_hypergraph(kind, rng)
    N = 16 if kind == "cycle" else 8
    for m in (2, 1):
        try:
            return Bd.embed(h, Bd.gen_tribes(m, N, seed), kind), rng
        except IncompatibleInputError:
            continue
    raise AssertionError(f"no embedding for {kind} seed {seed}")


def hard_instances():
    if "hard" not in _CACHE:
        _CACHE["hard"] = [(kind, seed, *_hard_instance(kind, seed)) for kind in KINDS for seed in range(50)]
    return _CACHE["hard"]


def test_criterion_1_unary_star_on_a_line(report):
    a = Assignment({"R": "P1", "S": "P2", "T": "P3", "U": "P4"}, "P4")
    start = time.perf_counter()
    got = {N: P.line_pipeline_bcq(_star(N, 1), G1, a).rounds for N in (8, 32, 128)}
    elapsed = time.perf_counter() - start
    ok = all(r == N + 2 for N, r in got.items()) and elapsed < 1
    report(1, "N+2 rounds on the line", ok, f"rounds {got} in {elapsed:.2f}s")


def test_criterion_2_two_route_split_on_the_clique(report):
    a = Assignment({"R": "P1", "S": "P2", "T": "P3", "U": "P4"}, "P2")
    routes = [[("P1", "P2"), ("P3", "P4"), ("P4", "P2")], [("P4", "P1"), ("P1", "P3"), ("P3", "P2")]]
    start = time.perf_counter()
    got = {N: P.line_pipeline_bcq(_star(N, 2), G2, a, routes=routes).rounds for N in (8, 32)}
    elapsed = time.perf_counter() - start
    ok = all(r == math.ceil(N / 2) + 2 for N, r in got.items()) and elapsed < 1
    report(2, "N/2+2 rounds on the clique", ok, f"rounds {got} in {elapsed:.2f}s")


def test_criterion_3_oracle_equivalence(report):
    runs, seconds = corpus_runs()
    start = time.perf_counter()
    bad = []
    for name, seed, q, t, res in runs:
        h = q.hypergraph
        assert len(h.vertices) <= 8 and max(h.domains.values()) <= 4 and q.N <= 32 and len(t.nodes) <= 8
        if not same_function(res.answer, eval_faq_bruteforce(q)):
            bad.append((name, seed))
    elapsed = seconds + time.perf_counter() - start
    ok = not bad and len(runs) == 700 and elapsed < 60
    report(3, "protocols agree with brute force", ok, f"{len(runs)} runs, mismatches {bad[:5]}, {elapsed:.1f}s")


def test_criterion_4_hard_instances_encode_tribes(report):
    start = time.perf_counter()
    insts = hard_instances()
    bad, too_big, values = [], [], {k: set() for k in KINDS}
    for kind, seed, inst, _ in insts:
        h = inst.query.hypergraph
        if math.prod(h.domains.values()) > 2**20:
            too_big.append((kind, seed))
            continue
        got = eval_faq_bruteforce(inst.query).scalar_value(BOOLEAN)
        values[kind].add(inst.tribes.value)
        if bool(got) != inst.tribes.value:
            bad.append((kind, seed))
    elapsed = time.perf_counter() - start
    ok = not bad and not too_big and len(insts) == 200 and elapsed < 60
    mix = {k: sorted(v) for k, v in values.items()}
    report(4, "hard instances equal TRIBES", ok, f"mismatches {bad[:5]}, oversized {too_big[:5]}, values {mix}, "
                                                f"{elapsed:.1f}s")


H2 = Hypergraph({v: 2 for v in "ABCDEF"},
                {"R": ("A", "B", "C"), "S": ("B", "D"), "T": ("C", "F"), "U": ("A", "B", "E")})
H1 = Hypergraph({"A": 4, "B": 2, "C": 2, "D": 2, "E": 2},
                {"R": ("A", "B"), "S": ("A", "C"), "T": ("A", "D"), "U": ("A", "E")})
H3 = Hypergraph({v: 2 for v in "ABCDEFGH"},
                {"e1": tuple("ABC"), "e2": tuple("BCD"), "e3": tuple("ACD"), "e4": tuple("ABE"),
                 "e5": tuple("AF"), "e6": tuple("BG"), "e7": tuple("GH")})
H3_TRACE = ("eliminate H from e7\nremove e7(G) subsumed by e6\n"
            "eliminate G from e6\nremove e6(B) subsumed by e1\n"
            "eliminate F from e5\nremove e5(A) subsumed by e1\n"
            "eliminate E from e4\nremove e4(A,B) subsumed by e1")


def test_criterion_5_gyo(report):
    leftovers = []
    for seed in range(200):
        h = corpus.random_acyclic(random.Random(seed))
        if gyo_reduce(h).surviving:
            leftovers.append(seed)
    g = gyo_reduce(H3)
    ok = not leftovers and g.trace() == H3_TRACE and g.surviving == ("e1", "e2", "e3")
    report(5, "GYO empties acyclic queries and reproduces the H3 run", ok,
           f"non-empty {leftovers[:5]}, H3 survivors {g.surviving}")


def test_criterion_6_width_witnesses(report):
    detail = []
    ok = True
    for name, h in (("H1", H1), ("H2", H2)):
        w = internal_node_width(h)
        problems = ghd_problems(h, w.witness)
        detail.append(f"{name} y={w.y} problems={len(problems)}")
        ok = ok and w.y == 1 and w.exact and is_valid_ghd(h, w.witness) and not problems
    report(6, "width-one witnesses for H1 and H2", ok, ", ".join(detail))


def test_criterion_7_capacity_invariant(report):
    runs, _ = corpus_runs()
    traces = [(t, res.trace) for *_, t, res in runs]
    for N in (8, 32, 128):
        traces.append((G1, P.line_pipeline_bcq(_star(N, 1), G1,
                                               Assignment({e: p for e, p in zip("RSTU", PLAYERS)}, "P4")).trace))
    for seed in range(30):
        q, t, a, kw = corpus.instance_for("faq_ss", seed)
        traces.append((t, P.faq_ss(q, t, a, duplex="half").trace))
    for k in (1, 4, 8, 16):
        x, mats = P.random_f2_chain(k, 8, seed=k)
        t = line_topology([f"P{i}" for i in range(k + 2)])
        traces.append((t, P.matrix_chain(x, mats, t, capacity_bits=8).trace))
        traces.append((t, P.matrix_chain_merge(x, mats, t, capacity_bits=8).trace))
    rng = random.Random(0)
    vecs = {p: [rng.randint(0, 1) for _ in range(50)] for p in PLAYERS}
    traces.append((G2, P.set_intersection_protocol(vecs, G2, "P1", capacity_bits=3).trace))
    for _, seed, inst, hrng in hard_instances()[::5]:
        t = corpus.random_topology(random.Random(seed), min_nodes=2)
        t = t if len(t.terminals) > 1 else t.with_terminals(t.nodes[:2])
        traces.append((t, P.faq_ss(inst.query, t, Bd.cut_assignment(t, inst)).trace))
    failing = sum(1 for t, tr in traces if not verify_trace(tr, t))
    report(7, "no edge carries more than B bits", failing == 0, f"{len(traces)} traces, {failing} with violations")


def test_criterion_8_bound_consistency(report):
    runs, _ = corpus_runs()
    over = []
    worst = 0.0
    for name, seed, q, t, res in runs:
        ratio = res.rounds / res.bound_estimate if res.bound_estimate else (0.0 if res.rounds == 0 else math.inf)
        worst = max(worst, ratio)
        if res.rounds > res.constant * res.bound_estimate:
            over.append((name, seed, res.rounds, res.bound_estimate))
    below = []
    worst_low = 0.0
    for kind, seed, inst, _ in hard_instances():
        t = corpus.random_topology(random.Random(seed + 1000), min_nodes=2)
        t = t if len(t.terminals) > 1 else t.with_terminals(t.nodes[:2])
        a = Bd.cut_assignment(t, inst)
        names = ["trivial", "faq_ss"]
        if inst.query.hypergraph.is_binary():
            names.append("general_bcq")
        if kind == "forest":
            names.append("forest_bcq")
        for name in names:
            res = _run(name, inst.query, t, a, {})
            b = Bd.bounds_input(inst.query, t, res.trace.capacity_bits)
            scaled = Bd.lower_bound_bcq(b) / Bd.polylog_slack(b.N, b.mincut)
            worst_low = max(worst_low, scaled / max(res.rounds, 1e-9))
            if scaled > res.rounds:
                below.append((kind, seed, name, res.rounds, scaled))
    constants_ok = all(c <= 8 for c in P.PROTOCOL_CONSTANTS.values())
    ok = not over and not below and constants_ok
    report(8, "measured rounds sit between the bound formulas", ok,
           f"worst measured/upper {worst:.2f}, worst scaled lower/measured {worst_low:.2f}, "
           f"upper breaches {over[:3]}, lower breaches {below[:3]}, max constant {max(P.PROTOCOL_CONSTANTS.values())}")


def test_criterion_9_matrix_chain(report):
    start = time.perf_counter()
    rounds = {}
    for k in (4, 8, 16, 32):
        x, mats = P.random_f2_chain(k, 8, seed=k)
        rounds[k] = P.matrix_chain(x, mats, line_topology([f"P{i}" for i in range(k + 2)]), capacity_bits=8).rounds
    ratios = {k: rounds[2 * k] / rounds[k] for k in (4, 8, 16)}
    scaling = all(1.8 <= r <= 2.2 for r in ratios.values())
    wrong = []
    for seed in range(50):
        rng = random.Random(seed)
        k, n = rng.randint(1, 8), rng.randint(1, 8)
        x, mats = P.random_f2_chain(k, n, seed=seed)
        t = line_topology([f"P{i}" for i in range(k + 2)])
        direct = P.f2_chain_direct(x, mats)
        if P.matrix_chain(x, mats, t).answer != direct or P.matrix_chain_merge(x, mats, t).answer != direct:
            wrong.append(seed)
    x, mats = P.random_f2_chain(64, 4, seed=1)
    t = line_topology([f"P{i}" for i in range(66)])
    pipe, merge = P.matrix_chain(x, mats, t), P.matrix_chain_merge(x, mats, t)
    elapsed = time.perf_counter() - start
    ok = scaling and not wrong and merge.rounds < pipe.rounds and elapsed < 30
    report(9, "matrix chain scaling, correctness and merge advantage", ok,
           f"rounds {rounds}, ratios {', '.join(f'{r:.2f}' for r in ratios.values())}, wrong {wrong[:5]}, "
           f"k=64 merge {merge.rounds} vs pipeline {pipe.rounds}, {elapsed:.1f}s")


def test_criterion_10_semiring_laws(report):
    failures = []
    for name, s in sorted(SEMIRINGS.items()):
        rng = random.Random(name)
        for _ in range(1000):
            a, b, c = s.sample(rng), s.sample(rng), s.sample(rng)
            laws = (
                s.add(s.add(a, b), c) == s.add(a, s.add(b, c)),
                s.mul(s.mul(a, b), c) == s.mul(a, s.mul(b, c)),
                s.add(a, b) == s.add(b, a),
                s.mul(a, b) == s.mul(b, a),
                s.mul(a, s.add(b, c)) == s.add(s.mul(a, b), s.mul(a, c)),
                s.add(a, s.zero) == a,
                s.mul(a, s.one) == a,
                s.mul(a, s.zero) == s.zero,
            )
            if not all(laws):
                failures.append((name, a, b, c))
    report(10, "semiring laws", not failures, f"{len(SEMIRINGS)} semirings x 1000 triples, failures {failures[:3]}")
