"""Command-line entry point: analyze, run, hard, mcm, bounds."""

from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path
from typing import Sequence

from . import bounds, protocols
from .errors import (
    CapacityViolation, DecompositionError, IncompatibleInputError, ParseError, RoundCapExceeded, SchemaError,
)
from .hypergraph import (
    Hypergraph, core_forest, degeneracy, format_hg, internal_node_width, is_acyclic, read_hg,
)
from .semiring import (
    BOOLEAN, FaqQuery, Relation, eval_faq_bruteforce, format_rel, get_semiring, read_rel, same_function,
    write_rel,
)
from .simulator import trace_problems
from .topology import (
    Assignment, Topology, format_assignment, line_topology, mcf_schedule, min_cut, read_assignment, read_topo,
    round_robin_assignment, st_table,
)

EXIT_OK = 0
EXIT_PARSE = 2
EXIT_INCOMPATIBLE = 3
EXIT_CAPACITY = 4
EXIT_MISMATCH = 5

ORACLE_LIMIT = 2 ** 20
PROTOCOL_NAMES = ("trivial", "line_pipeline", "star_bcq", "forest_bcq", "general_bcq", "star_faq", "faq_ss",
                  "split_star_faq")


def _product_space(h: Hypergraph) -> int:
    return math.prod(h.domains.values())


def load_query(hg_path: str, semiring_name: str, free: str | None, relations_dir: str | None) -> FaqQuery:
    h = read_hg(hg_path)
    s = get_semiring(semiring_name)
    folder = Path(relations_dir) if relations_dir else Path(hg_path).parent
    rels = {}
    for e in h.edges:
        path = folder / f"{e}.rel"
        if not path.exists():
            raise ParseError(f"missing relation file {path}", source=str(path))
        rels[e] = read_rel(path, s)
    free_vars = tuple(x for x in (free or "").split(",") if x)
    return FaqQuery(h, rels, free_vars, s)


def resolve_assignment(source: str, h: Hypergraph, t: Topology) -> Assignment:
    if source == "round-robin":
        return round_robin_assignment(list(h.edges), t)
    if source == "worst-case-cut":
        return bounds.split_by_cut(t, list(h.edges))
    return read_assignment(source)


def run_protocol(name: str, q: FaqQuery, t: Topology, a: Assignment, capacity_bits: int | None,
                 duplex: str, seed: int) -> protocols.ProtocolResult:
    kw = {"capacity_bits": capacity_bits, "duplex": duplex}
    if name == "trivial":
        return protocols.trivial_protocol(q, t, a, **kw)
    if name == "line_pipeline":
        return protocols.line_pipeline_bcq(q, t, a, **kw)
    if name == "split_star_faq":
        ghd = protocols.star_ghd(q.hypergraph)
        family = protocols.consistent_hash_family(ghd, t.terminals, seed)
        return protocols.split_star_faq(q, t, family, a.answer_player, **kw)
    fn = {"star_bcq": protocols.star_bcq, "forest_bcq": protocols.forest_bcq,
          "general_bcq": protocols.general_bcq, "star_faq": protocols.star_faq, "faq_ss": protocols.faq_ss}
    if name not in fn:
        raise IncompatibleInputError(f"unknown protocol {name!r}")
    return fn[name](q, t, a, **kw)


def _query_name(path: str) -> str:
    p = Path(path)
    return p.parent.name if p.stem == "query" and p.parent.name else p.stem


def _write_report(rows: Sequence[dict], path: Path | None, out) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=bounds.REPORT_COLUMNS, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow(row)
    if path is not None:
        path.write_text(buf.getvalue(), encoding="utf-8", newline="\n")
    else:
        out.write(buf.getvalue())


# --------------------------------------------------------------------------- commands


def cmd_analyze(args, out) -> int:
    h = read_hg(args.query)
    t = read_topo(args.topology)
    w = internal_node_width(h, seed=args.seed)
    cf = core_forest(h)
    print(f"vertices: {len(h.vertices)}  edges: {h.k}  r: {h.r}", file=out)
    print(f"acyclic: {is_acyclic(h)}", file=out)
    print(f"y: {w.y}{'' if w.exact else ' (upper bound, heuristic search)'}", file=out)
    print("witness:", file=out)
    for line in w.witness.serialize().split(";"):
        print(f"  {line}", file=out)
    print(f"n2: {cf.n2}  core vertices: {' '.join(cf.core_vertices)}", file=out)
    print(f"degeneracy: {degeneracy(h)}", file=out)
    if len(t.terminals) > 1:
        cut = min_cut(t)
        print(f"mincut: {cut.value}  sides: {{{','.join(cut.side_a)}}} {{{','.join(cut.side_b)}}}", file=out)
        table = st_table(t)
        print("ST: " + " ".join(f"{d}:{n}" for d, n in table.items()), file=out)
    else:
        print("mincut: n/a (one terminal)", file=out)
    B = args.capacity_bits or t.capacity_bits or protocols.default_capacity(
        FaqQuery(h, {e: Relation.from_rows(vs, [h.domains[v] for v in vs], [], BOOLEAN) for e, vs in h.edges.items()},
                 (), BOOLEAN))
    folder = Path(args.relations) if args.relations else Path(args.query).parent
    if all((folder / f"{e}.rel").exists() for e in h.edges):
        q = load_query(args.query, args.semiring, None, args.relations)
        a = round_robin_assignment(list(h.edges), t)
        demands = [(a.placement[e], len(r) * r.record_bits(q.semiring)) for e, r in q.relations.items()]
        print(f"tau_mcf: {mcf_schedule(t, demands, a.answer_player, B).rounds} (round-robin placement, B={B})",
              file=out)
    else:
        print("tau_mcf: n/a (relation files not found)", file=out)
    return EXIT_OK


def cmd_run(args, out) -> int:
    q = load_query(args.query, args.semiring, args.free, args.relations)
    t = read_topo(args.topology)
    a = resolve_assignment(args.assignment, q.hypergraph, t)
    res = run_protocol(args.protocol, q, t, a, args.capacity_bits, args.duplex, args.seed)
    problems = trace_problems(res.trace, t)
    print(f"protocol: {res.protocol}", file=out)
    print(f"rounds: {res.rounds}", file=out)
    for label, r in res.phases:
        print(f"  phase {label}: {r}", file=out)
    print(f"bound estimate: {res.bound_estimate}", file=out)
    print(f"trace violations: {len(problems)}", file=out)
    for note in res.notes:
        print(f"note: {note}", file=out)
    if res.answer.attrs:
        print("answer:", file=out)
        out.write(format_rel(res.answer, q.semiring))
    else:
        print(f"answer: {q.semiring.format(res.answer.scalar_value(q.semiring))}", file=out)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        res.trace.write_csv(d / "trace.csv")
        write_rel(d / "answer.rel", res.answer, q.semiring)
        row = bounds.gap_report(q, t, res.rounds, res.protocol, res.bound_estimate or 0,
                                _query_name(args.query), Path(args.topology).stem, res.trace.capacity_bits)
        _write_report([row], d / "report.csv", out)
    if problems:
        return EXIT_CAPACITY
    if _product_space(q.hypergraph) <= ORACLE_LIMIT:
        if not same_function(res.answer, eval_faq_bruteforce(q, ORACLE_LIMIT)):
            print("oracle: MISMATCH", file=out)
            return EXIT_MISMATCH
        print("oracle: match", file=out)
    else:
        print("oracle: skipped (product space too large)", file=out)
    return EXIT_OK


def cmd_hard(args, out) -> int:
    h = read_hg(args.query)
    tr = bounds.gen_tribes(args.m or bounds.default_m(h, args.kind), args.N, args.seed)
    inst = bounds.embed(h, tr, args.kind)
    q = inst.query
    lines = [f"kind {inst.kind}", f"m {tr.m}", f"N {tr.N}", f"value {int(tr.value)}"]
    for i, (s_set, t_set) in enumerate(inst.tribes.pairs):
        lines.append(f"S{i} " + " ".join(str(x) for x in sorted(s_set)))
        lines.append(f"T{i} " + " ".join(str(x) for x in sorted(t_set)))
    lines.append("s_edges " + " ".join(inst.s_edges))
    lines.append("t_edges " + " ".join(inst.t_edges))
    if args.topology:
        bounds.cut_assignment(read_topo(args.topology), inst)
    if args.out:
        d = Path(args.out)
        d.mkdir(parents=True, exist_ok=True)
        (d / "query.hg").write_text(format_hg(q.hypergraph), encoding="utf-8", newline="\n")
        for e, rel in q.relations.items():
            write_rel(d / f"{e}.rel", rel, BOOLEAN)
        (d / "tribes.txt").write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")
        if inst.assignment is not None:
            (d / "assignment.asg").write_text(format_assignment(inst.assignment), encoding="utf-8", newline="\n")
    for line in lines:
        print(line, file=out)
    for note in inst.notes:
        print(f"note: {note}", file=out)
    if _product_space(q.hypergraph) <= ORACLE_LIMIT:
        got = bool(eval_faq_bruteforce(q, ORACLE_LIMIT).entries)
        verdict = got == inst.tribes.value
        print(f"verified: {'yes' if verdict else 'NO'} (query answer {int(got)})", file=out)
        return EXIT_OK if verdict else EXIT_MISMATCH
    print("verified: skipped (product space too large)", file=out)
    return EXIT_OK


def cmd_mcm(args, out) -> int:
    x, mats = protocols.random_f2_chain(args.k, args.N, args.seed)
    if args.identity:
        mats = [protocols.f2_identity(args.N) for _ in range(args.k)]
    t = line_topology([f"P{i}" for i in range(args.k + 2)], capacity_bits=args.capacity_bits)
    fn = protocols.matrix_chain if args.variant == "pipeline" else protocols.matrix_chain_merge
    res = fn(x, mats, t, n=args.N)
    expected = protocols.f2_chain_direct(x, mats)
    print(f"variant: {args.variant}  k: {args.k}  N: {args.N}  B: {res.trace.capacity_bits}", file=out)
    print(f"rounds: {res.rounds}", file=out)
    print(f"correct: {res.answer == expected}", file=out)
    if res.answer != expected:
        return EXIT_MISMATCH
    return EXIT_CAPACITY if trace_problems(res.trace, t) else EXIT_OK


def cmd_bounds(args, out) -> int:
    q = load_query(args.query, args.semiring, args.free, args.relations)
    t = read_topo(args.topology)
    a = resolve_assignment(args.assignment, q.hypergraph, t)
    res = run_protocol(args.protocol, q, t, a, args.capacity_bits, args.duplex, args.seed)
    row = bounds.gap_report(q, t, res.rounds, res.protocol, res.bound_estimate or 0,
                            _query_name(args.query), Path(args.topology).stem, res.trace.capacity_bits)
    _write_report([row], Path(args.out) if args.out else None, out)
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="faqnet", description="Distributed sum-of-products query simulator.")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, topology_required=True):
        sp.add_argument("--query", required=True, help=".hg file; relation files are <edge>.rel beside it")
        sp.add_argument("--topology", required=topology_required, help=".topo file")
        sp.add_argument("--relations", help="directory holding the .rel files")
        sp.add_argument("--semiring", default="boolean", help="boolean, counting, f2 or min_plus")
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--out", help="output directory (or file for bounds)")
        sp.add_argument("--capacity-bits", type=int, default=None)

    def running(sp):
        sp.add_argument("--protocol", default="trivial", choices=PROTOCOL_NAMES)
        sp.add_argument("--assignment", default="round-robin",
                        help="assignment file, 'round-robin' or 'worst-case-cut'")
        sp.add_argument("--free", help="comma-separated free variables")
        sp.add_argument("--duplex", choices=("full", "half"), default="full")

    sp = sub.add_parser("analyze", help="structural parameters of a query and a topology")
    common(sp)
    sp.set_defaults(func=cmd_analyze)

    sp = sub.add_parser("run", help="simulate a protocol and check it against the oracle")
    common(sp)
    running(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("hard", help="emit a TRIBES-embedded hard instance")
    common(sp, topology_required=False)
    sp.add_argument("--kind", required=True, choices=("forest", "cycle", "independent-set", "hypergraph"))
    sp.add_argument("--m", type=int, default=None)
    sp.add_argument("--N", type=int, default=16)
    sp.set_defaults(func=cmd_hard)

    sp = sub.add_parser("mcm", help="matrix chain over F2 on a line")
    sp.add_argument("--k", type=int, required=True)
    sp.add_argument("--N", type=int, required=True)
    sp.add_argument("--variant", choices=("pipeline", "merge"), default="pipeline")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--capacity-bits", type=int, default=None)
    sp.add_argument("--identity", action="store_true", help="use identity matrices")
    sp.set_defaults(func=cmd_mcm)

    sp = sub.add_parser("bounds", help="gap report row: formulas next to measured rounds")
    common(sp)
    running(sp)
    sp.set_defaults(func=cmd_bounds)
    return p


def main(argv: Sequence[str] | None = None, out=None) -> int:
    out = out or sys.stdout
    args = build_parser().parse_args(argv)
    try:
        return args.func(args, out)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_PARSE
    except (IncompatibleInputError, SchemaError, DecompositionError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INCOMPATIBLE
    except (CapacityViolation, RoundCapExceeded) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CAPACITY


if __name__ == "__main__":
    sys.exit(main())
