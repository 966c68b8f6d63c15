"""Commutative semirings, annotated relations and centralized FAQ evaluation.

A relation is stored in listing form: the sorted list of tuples whose
annotation is not the semiring zero.  All operators here are pure and return
new relations.
"""

from __future__ import annotations

import itertools
import math
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

from .errors import DecompositionError, OracleCapExceeded, ParseError, SchemaError
from .hypergraph import Ghd, Hypergraph, build_gyo_ghd, validate_ghd

Element = Any
Row = tuple[int, ...]

COUNTING_MAX = 2**64 - 1


@dataclass(frozen=True)
class Semiring:
    """A commutative semiring together with a fixed wire width per element."""

    name: str
    zero: Element
    one: Element
    add: Callable[[Element, Element], Element]
    mul: Callable[[Element, Element], Element]
    encode_bits: int
    parse: Callable[[str], Element]
    format: Callable[[Element], str]
    sample: Callable[[random.Random], Element]

    def is_zero(self, x: Element) -> bool:
        return x == self.zero

    def sum(self, values: Iterable[Element]) -> Element:
        acc = self.zero
        for v in values:
            acc = self.add(acc, v)
        return acc

    def prod(self, values: Iterable[Element]) -> Element:
        acc = self.one
        for v in values:
            acc = self.mul(acc, v)
        return acc

    @property
    def is_boolean(self) -> bool:
        return self.name == "boolean"

    def __repr__(self) -> str:
        return f"Semiring({self.name})"


def _parse_int(text: str) -> int:
    try:
        return int(text)
    except ValueError as exc:
        raise ValueError(f"not an integer: {text!r}") from exc


def _parse_bit(text: str) -> int:
    v = _parse_int(text)
    if v not in (0, 1):
        raise ValueError(f"expected 0 or 1, got {text!r}")
    return v


def _sat_add(a: int, b: int) -> int:
    return min(a + b, COUNTING_MAX)


def _sat_mul(a: int, b: int) -> int:
    return min(a * b, COUNTING_MAX)


def _sample_counting(rng: random.Random) -> int:
    # Mix small values with values near the saturation point.
    pick = rng.random()
    if pick < 0.7:
        return rng.randrange(0, 16)
    if pick < 0.9:
        return rng.randrange(0, 2**40)
    return rng.randrange(COUNTING_MAX - 2**20, COUNTING_MAX + 1)


def _minplus_add(a, b):
    return min(a, b)


def _minplus_mul(a, b):
    if a == math.inf or b == math.inf:
        return math.inf
    return a + b


def _parse_minplus(text: str):
    if text.strip().lower() in ("inf", "+inf"):
        return math.inf
    return _parse_int(text)


def _format_minplus(x) -> str:
    return "inf" if x == math.inf else str(x)


def _sample_minplus(rng: random.Random):
    return math.inf if rng.random() < 0.15 else rng.randrange(0, 1000)


BOOLEAN = Semiring(
    name="boolean", zero=0, one=1,
    add=lambda a, b: a | b, mul=lambda a, b: a & b,
    encode_bits=1, parse=_parse_bit, format=str,
    sample=lambda rng: rng.randrange(2),
)

COUNTING = Semiring(
    name="counting", zero=0, one=1,
    add=_sat_add, mul=_sat_mul,
    encode_bits=64, parse=_parse_int, format=str,
    sample=_sample_counting,
)

F2 = Semiring(
    name="f2", zero=0, one=1,
    add=lambda a, b: a ^ b, mul=lambda a, b: a & b,
    encode_bits=1, parse=_parse_bit, format=str,
    sample=lambda rng: rng.randrange(2),
)

MIN_PLUS = Semiring(
    name="minplus", zero=math.inf, one=0,
    add=_minplus_add, mul=_minplus_mul,
    encode_bits=64, parse=_parse_minplus, format=_format_minplus,
    sample=_sample_minplus,
)

SEMIRINGS: dict[str, Semiring] = {s.name: s for s in (BOOLEAN, COUNTING, F2, MIN_PLUS)}


def get_semiring(name: str) -> Semiring:
    try:
        return SEMIRINGS[name.lower()]
    except KeyError:
        raise SchemaError(f"unknown semiring {name!r}; choose from {sorted(SEMIRINGS)}") from None


def is_saturated(s: Semiring, x: Element) -> bool:
    """True when a counting-semiring value hit the saturation ceiling."""
    return s.name == "counting" and x >= COUNTING_MAX


def bits_for_domain(size: int) -> int:
    """Bits needed to name one value of a domain of the given size (at least 1)."""
    return max(1, math.ceil(math.log2(size))) if size > 1 else 1


@dataclass(frozen=True)
class Relation:
    """A semiring-annotated function in listing representation.

    ``entries`` is sorted by tuple and never contains the semiring zero.
    """

    attrs: tuple[str, ...]
    domain_sizes: tuple[int, ...]
    entries: tuple[tuple[Row, Element], ...] = ()
    _index: dict = field(default=None, init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        if len(self.attrs) != len(self.domain_sizes):
            raise SchemaError("attrs and domain_sizes differ in length")
        if len(set(self.attrs)) != len(self.attrs):
            raise SchemaError(f"duplicate attribute in {self.attrs}")
        for d in self.domain_sizes:
            if not isinstance(d, int) or d < 1:
                raise SchemaError(f"domain sizes must be positive integers, got {d!r}")

    @staticmethod
    def build(attrs: Sequence[str], domain_sizes: Sequence[int],
              items: Mapping[Row, Element] | Iterable[tuple[Row, Element]],
              semiring: Semiring) -> "Relation":
        """Validate rows, reject duplicates, drop zeros and sort."""
        attrs = tuple(attrs)
        domain_sizes = tuple(int(d) for d in domain_sizes)
        pairs = items.items() if isinstance(items, Mapping) else items
        seen: dict[Row, Element] = {}
        for row, val in pairs:
            row = tuple(int(x) for x in row)
            if len(row) != len(attrs):
                raise SchemaError(f"row {row} does not match attributes {attrs}")
            for x, d, a in zip(row, domain_sizes, attrs):
                if not 0 <= x < d:
                    raise SchemaError(f"value {x} of {a} outside [0, {d})")
            if row in seen:
                raise SchemaError(f"duplicate row {row}")
            seen[row] = val
        entries = tuple(sorted((r, v) for r, v in seen.items() if not semiring.is_zero(v)))
        return Relation(attrs, domain_sizes, entries)

    @staticmethod
    def from_rows(attrs: Sequence[str], domain_sizes: Sequence[int], rows: Iterable[Row],
                  semiring: Semiring = BOOLEAN) -> "Relation":
        """Relation whose listed rows are all annotated with ``semiring.one``."""
        return Relation.build(attrs, domain_sizes, {tuple(r): semiring.one for r in rows}, semiring)

    @staticmethod
    def scalar(value: Element, semiring: Semiring) -> "Relation":
        """Relation over no attributes holding a single scalar (or nothing if zero)."""
        return Relation.build((), (), {(): value}, semiring)

    def __len__(self) -> int:
        return len(self.entries)

    @property
    def rows(self) -> list[Row]:
        return [r for r, _ in self.entries]

    def as_dict(self) -> dict[Row, Element]:
        if self._index is None:
            object.__setattr__(self, "_index", dict(self.entries))
        return self._index

    def value(self, row: Row, semiring: Semiring) -> Element:
        return self.as_dict().get(tuple(row), semiring.zero)

    def domain_of(self, attr: str) -> int:
        return self.domain_sizes[self.attrs.index(attr)]

    def domains(self) -> dict[str, int]:
        return dict(zip(self.attrs, self.domain_sizes))

    def scalar_value(self, semiring: Semiring) -> Element:
        """Value of a relation over no attributes."""
        if self.attrs:
            raise SchemaError("scalar_value needs a relation over no attributes")
        return self.entries[0][1] if self.entries else semiring.zero

    def positions(self, attrs: Sequence[str]) -> tuple[int, ...]:
        try:
            return tuple(self.attrs.index(a) for a in attrs)
        except ValueError:
            missing = [a for a in attrs if a not in self.attrs]
            raise SchemaError(f"unknown attributes {missing} for relation over {self.attrs}") from None

    def record_bits(self, semiring: Semiring) -> int:
        """Wire size of one listed entry: the tuple plus its annotation unless Boolean."""
        bits = sum(bits_for_domain(d) for d in self.domain_sizes)
        if not semiring.is_boolean:
            bits += semiring.encode_bits
        return max(bits, 1)


def _check_shared(a: Relation, b: Relation) -> list[str]:
    shared = [x for x in a.attrs if x in b.attrs]
    for x in shared:
        if a.domain_of(x) != b.domain_of(x):
            raise SchemaError(f"attribute {x} has domain {a.domain_of(x)} in one relation "
                              f"and {b.domain_of(x)} in the other")
    return shared


def join(a: Relation, b: Relation, s: Semiring) -> Relation:
    """Natural join with multiplied annotations."""
    shared = _check_shared(a, b)
    extra = [x for x in b.attrs if x not in a.attrs]
    attrs = a.attrs + tuple(extra)
    domains = a.domain_sizes + tuple(b.domain_of(x) for x in extra)
    a_pos = a.positions(shared)
    b_pos = b.positions(shared)
    b_extra = b.positions(extra)
    buckets: dict[Row, list[tuple[Row, Element]]] = {}
    for row, val in b.entries:
        key = tuple(row[i] for i in b_pos)
        buckets.setdefault(key, []).append((tuple(row[i] for i in b_extra), val))
    out: dict[Row, Element] = {}
    for row, val in a.entries:
        key = tuple(row[i] for i in a_pos)
        for tail, bval in buckets.get(key, ()):
            prod = s.mul(val, bval)
            if not s.is_zero(prod):
                out[row + tail] = prod
    return Relation(attrs, domains, tuple(sorted(out.items())))


def semijoin(a: Relation, b: Relation) -> Relation:
    """Entries of ``a`` whose projection on the shared attributes occurs in ``b``."""
    shared = _check_shared(a, b)
    a_pos = a.positions(shared)
    b_pos = b.positions(shared)
    keys = {tuple(row[i] for i in b_pos) for row, _ in b.entries}
    kept = tuple((row, v) for row, v in a.entries if tuple(row[i] for i in a_pos) in keys)
    return Relation(a.attrs, a.domain_sizes, kept)


def project_aggregate(r: Relation, keep: Iterable[str], s: Semiring) -> Relation:
    """Sum out every attribute not in ``keep``; kept attributes stay in ``r``'s order."""
    keep = set(keep)
    unknown = keep - set(r.attrs)
    if unknown:
        raise SchemaError(f"cannot keep unknown attributes {sorted(unknown)}")
    kept_attrs = [x for x in r.attrs if x in keep]
    if len(kept_attrs) == len(r.attrs):
        return r
    pos = r.positions(kept_attrs)
    out: dict[Row, Element] = {}
    for row, val in r.entries:
        key = tuple(row[i] for i in pos)
        out[key] = s.add(out[key], val) if key in out else val
    entries = tuple(sorted((k, v) for k, v in out.items() if not s.is_zero(v)))
    return Relation(tuple(kept_attrs), tuple(r.domain_sizes[i] for i in pos), entries)


def reorder(r: Relation, attrs: Sequence[str]) -> Relation:
    """Same relation with its columns permuted into ``attrs`` order."""
    attrs = tuple(attrs)
    if attrs == r.attrs:
        return r
    if sorted(attrs) != sorted(r.attrs):
        raise SchemaError(f"cannot reorder {r.attrs} into {attrs}")
    pos = r.positions(attrs)
    entries = tuple(sorted((tuple(row[i] for i in pos), v) for row, v in r.entries))
    return Relation(attrs, tuple(r.domain_sizes[i] for i in pos), entries)


def same_function(a: Relation, b: Relation) -> bool:
    """Equality up to column order."""
    if sorted(a.attrs) != sorted(b.attrs):
        return False
    return reorder(b, a.attrs).entries == a.entries and reorder(b, a.attrs).domain_sizes == a.domain_sizes


# --------------------------------------------------------------------------- queries


@dataclass(frozen=True)
class FaqQuery:
    """A sum-of-products query: one relation per hyperedge, free variables, a semiring."""

    hypergraph: Hypergraph
    relations: Mapping[str, Relation]
    free_vars: tuple[str, ...]
    semiring: Semiring

    def __post_init__(self):
        h = self.hypergraph
        if set(self.relations) != set(h.edges):
            raise SchemaError(f"relations {sorted(self.relations)} do not match hyperedges {sorted(h.edges)}")
        fixed = {}
        for eid, verts in h.edges.items():
            rel = self.relations[eid]
            if sorted(rel.attrs) != sorted(verts):
                raise SchemaError(f"relation {eid} has attributes {rel.attrs}, hyperedge has {verts}")
            for v in verts:
                if rel.domain_of(v) != h.domains[v]:
                    raise SchemaError(f"relation {eid}: domain of {v} is {rel.domain_of(v)}, "
                                      f"hypergraph says {h.domains[v]}")
            fixed[eid] = reorder(rel, verts)
        object.__setattr__(self, "relations", fixed)
        free = tuple(v for v in h.vertices if v in set(self.free_vars))
        if len(free) != len(set(self.free_vars)):
            raise SchemaError(f"free variables {self.free_vars} are not all vertices")
        object.__setattr__(self, "free_vars", free)

    @property
    def N(self) -> int:
        """Largest relation size."""
        return max((len(r) for r in self.relations.values()), default=0)

    def with_relations(self, relations: Mapping[str, Relation]) -> "FaqQuery":
        return FaqQuery(self.hypergraph, relations, self.free_vars, self.semiring)


def _assign_edges(h: Hypergraph, ghd: Ghd) -> dict[str, str]:
    """Map each hyperedge to the first GHD node that covers it."""
    placed = {}
    for eid, verts in h.edges.items():
        best = None
        for node in ghd.order:
            if set(verts) <= ghd.chi[node]:
                if eid in ghd.lam[node]:
                    best = node
                    break
                if best is None:
                    best = node
        if best is None:
            raise DecompositionError(f"hyperedge {eid} is not covered by any bag")
        placed[eid] = best
    return placed


def eval_faq_centralized(q: FaqQuery, ghd: Ghd | None = None) -> Relation:
    """Bottom-up message passing over a GHD; the result is over ``q.free_vars``."""
    h = q.hypergraph
    s = q.semiring
    if ghd is None:
        ghd = build_gyo_ghd(h)
    else:
        validate_ghd(h, ghd)
    free = set(q.free_vars)
    placed = _assign_edges(h, ghd)
    local: dict[str, list[Relation]] = {n: [] for n in ghd.order}
    for eid, node in placed.items():
        local[node].append(q.relations[eid])
    msgs: dict[str, Relation] = {}
    for node in reversed(ghd.order):
        acc = Relation.scalar(s.one, s)
        for rel in local[node]:
            acc = join(acc, rel, s)
        for child in ghd.children(node):
            acc = join(acc, msgs[child], s)
        parent = ghd.parent.get(node)
        keep = free | (ghd.chi[parent] if parent is not None else set())
        msgs[node] = project_aggregate(acc, [a for a in acc.attrs if a in keep], s)
    result = msgs[ghd.root] if ghd.order else Relation.scalar(s.one, s)
    return reorder(result, [v for v in h.vertices if v in free])


def eval_faq_bruteforce(q: FaqQuery, cap: int = 2**20) -> Relation:
    """Literal sum over the full product space of all variable domains."""
    h = q.hypergraph
    s = q.semiring
    verts = list(h.vertices)
    space = math.prod(h.domains[v] for v in verts)
    if space > cap:
        raise OracleCapExceeded(f"product space {space} exceeds cap {cap}")
    edge_pos = {eid: [verts.index(v) for v in vs] for eid, vs in h.edges.items()}
    tables = {eid: q.relations[eid].as_dict() for eid in h.edges}
    free_pos = [verts.index(v) for v in q.free_vars]
    out: dict[Row, Element] = {}
    for point in itertools.product(*(range(h.domains[v]) for v in verts)):
        val = s.one
        for eid, pos in edge_pos.items():
            f = tables[eid].get(tuple(point[i] for i in pos))
            if f is None:
                val = s.zero
                break
            val = s.mul(val, f)
        if s.is_zero(val):
            continue
        key = tuple(point[i] for i in free_pos)
        out[key] = s.add(out[key], val) if key in out else val
    if not verts:
        out = {(): s.one}
    entries = tuple(sorted((k, v) for k, v in out.items() if not s.is_zero(v)))
    return Relation(tuple(q.free_vars), tuple(h.domains[v] for v in q.free_vars), entries)


# --------------------------------------------------------------------------- text format


def parse_rel(text: str, semiring: Semiring, source: str | None = None) -> Relation:
    """Parse the ``.rel`` format: names, domain sizes, then ``v1,v2|value`` lines."""
    lines = text.split("\n")
    if lines and lines[-1] == "":
        lines.pop()
    if len(lines) < 2:
        raise ParseError("expected attribute and domain header lines", line=len(lines) + 1, source=source)
    attrs = lines[0].split()
    try:
        domains = [int(x) for x in lines[1].split()]
    except ValueError:
        raise ParseError("domain sizes must be integers", line=2, column=1, source=source) from None
    if len(domains) != len(attrs):
        raise ParseError(f"{len(attrs)} attributes but {len(domains)} domain sizes", line=2, source=source)
    items: dict[Row, Element] = {}
    for lineno, line in enumerate(lines[2:], start=3):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        if "|" not in line:
            raise ParseError("missing '|' before the annotation", line=lineno, column=len(line) + 1,
                             source=source)
        left, right = line.split("|", 1)
        parts = [p.strip() for p in left.split(",")] if left.strip() else []
        if len(parts) != len(attrs):
            raise ParseError(f"expected {len(attrs)} values, found {len(parts)}", line=lineno, column=1,
                             source=source)
        row = []
        col = 1
        for p in parts:
            try:
                x = int(p)
            except ValueError:
                raise ParseError(f"bad value {p!r}", line=lineno, column=col, source=source) from None
            row.append(x)
            col += len(p) + 1
        try:
            val = semiring.parse(right.strip())
        except ValueError as exc:
            raise ParseError(str(exc), line=lineno, column=len(left) + 2, source=source) from None
        row_t = tuple(row)
        if row_t in items:
            raise ParseError(f"duplicate row {row_t}", line=lineno, column=1, source=source)
        items[row_t] = val
    try:
        return Relation.build(attrs, domains, items, semiring)
    except SchemaError as exc:
        raise ParseError(str(exc), source=source) from None


def format_rel(r: Relation, semiring: Semiring) -> str:
    lines = [" ".join(r.attrs), " ".join(str(d) for d in r.domain_sizes)]
    for row, val in r.entries:
        lines.append(",".join(str(x) for x in row) + "|" + semiring.format(val))
    return "\n".join(lines) + "\n"


def read_rel(path: str | Path, semiring: Semiring) -> Relation:
    path = Path(path)
    return parse_rel(path.read_text(encoding="utf-8"), semiring, source=str(path))


def write_rel(path: str | Path, r: Relation, semiring: Semiring) -> None:
    Path(path).write_text(format_rel(r, semiring), encoding="utf-8", newline="\n")

