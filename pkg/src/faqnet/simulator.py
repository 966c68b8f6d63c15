"""Deterministic round-synchronous message passing with a per-edge bit budget.

In round i every node hands the engine at most one message per incident
edge.  The engine checks each message against the budget B, records it, and
delivers all of them at the end of round i, so a relayed message leaves in
round i + 1 at the earliest.
"""

from __future__ import annotations

import csv
import hashlib
import io
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, NamedTuple, Sequence

from .errors import CapacityViolation, RoundCapExceeded, SchemaError
from .topology import Topology, edge_key


@dataclass(frozen=True)
class Message:
    """One transmission over one edge in one direction.

    ``bit_len`` is what the budget is charged.  ``tag`` names the logical
    stream for the trace and is not charged.
    """

    payload: Any
    bit_len: int
    tag: int = 0


class NodeProgram:
    """Per-node behaviour.  Subclasses override the hooks they need."""

    def send(self, rnd: int) -> dict[str, Message]:
        return {}

    def receive(self, rnd: int, inbox: Mapping[str, Message]) -> None:
        pass

    def done(self) -> bool:
        return True

    def output(self) -> Any:
        return None


class TraceRecord(NamedTuple):
    round: int
    edge_a: str
    edge_b: str
    direction: str  # "ab" means edge_a sent to edge_b
    bits: int
    tag: int


@dataclass
class SimulationTrace:
    rounds: int
    records: list[TraceRecord]
    capacity_bits: int
    duplex: str = "full"
    answer: Any = None
    violations: list[str] = field(default_factory=list)

    def per_round_edge_bits(self) -> dict[tuple[int, tuple[str, str], str], int]:
        out: dict = {}
        for r in self.records:
            key = (r.round, (r.edge_a, r.edge_b), r.direction)
            out[key] = out.get(key, 0) + r.bits
        return out

    @property
    def total_bits(self) -> int:
        return sum(r.bits for r in self.records)

    def answer_digest(self) -> str:
        return hashlib.sha256(repr(self.answer).encode()).hexdigest()[:16]

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["round", "edge_a", "edge_b", "direction", "bits", "tag"])
        for r in self.records:
            w.writerow(list(r))
        buf.write(f"# rounds={self.rounds} answer_digest={self.answer_digest()}\n")
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8", newline="\n")


class Idle(NodeProgram):
    """A node that never sends and ignores what it receives."""


def default_round_cap(k: int, n: int, width_bits: int, capacity_bits: int, num_nodes: int) -> int:
    """10 * k * N * ceil(w / B) + |V|^2."""
    per_item = -(-max(width_bits, 1) // capacity_bits)
    return 10 * max(k, 1) * max(n, 1) * per_item + num_nodes ** 2


def run(t: Topology, programs: Mapping[str, NodeProgram], capacity_bits: int,
        duplex: str = "full", round_cap: int = 1_000_000, answer_player: str | None = None) -> SimulationTrace:
    """Drive ``programs`` until every one reports done.

    ``rounds`` in the result is the last round that carried traffic.  With
    ``duplex="half"`` a round that uses both directions of some edge costs
    two rounds: the reverse direction of every such edge moves to the
    second one.
    """
    if duplex not in ("full", "half"):
        raise SchemaError(f"duplex must be 'full' or 'half', got {duplex!r}")
    B = capacity_bits
    progs = {n: programs.get(n, Idle()) for n in t.nodes}
    for n in programs:
        if n not in progs:
            raise SchemaError(f"program for unknown node {n}")
    edges = set(t.edges)
    records: list[TraceRecord] = []
    last = 0
    shift = 0
    rnd = 0
    while not all(p.done() for p in progs.values()):
        rnd += 1
        if rnd > round_cap:
            raise RoundCapExceeded(f"no termination after {round_cap} rounds")
        inboxes: dict[str, dict[str, Message]] = {n: {} for n in t.nodes}
        sent: list[tuple[str, str, Message]] = []
        for n in t.nodes:
            out = progs[n].send(rnd) or {}
            for nbr, msg in out.items():
                if edge_key(n, nbr) not in edges:
                    raise CapacityViolation(f"{n} sent to non-neighbour {nbr}", rnd, (n, nbr))
                if msg.bit_len < 1 or msg.bit_len > B:
                    raise CapacityViolation(f"message of {msg.bit_len} bits, budget {B}", rnd, (n, nbr))
                inboxes[nbr][n] = msg
                sent.append((n, nbr, msg))
        if sent:
            both = set()
            if duplex == "half":
                dirs = {(a, b) for a, b, _ in sent}
                both = {edge_key(a, b) for a, b in dirs if (b, a) in dirs}
            for a, b, msg in sent:
                ea, eb = edge_key(a, b)
                direction = "ab" if a == ea else "ba"
                late = edge_key(a, b) in both and direction == "ba"
                records.append(TraceRecord(rnd + shift + (1 if late else 0), ea, eb, direction,
                                           msg.bit_len, msg.tag))
            if both:
                shift += 1
            last = rnd + shift
        for n in t.nodes:
            progs[n].receive(rnd, inboxes[n])
    records.sort(key=lambda r: (r.round, r.edge_a, r.edge_b, r.direction))
    answer = progs[answer_player].output() if answer_player is not None else None
    return SimulationTrace(last, records, B, duplex, answer)


def trace_problems(tr: SimulationTrace, t: Topology) -> list[str]:
    """Every budget, edge, slot and ordering violation found in a trace."""
    problems = []
    edges = set(t.edges)
    seen = set()
    prev = 0
    for i, r in enumerate(tr.records):
        if (r.edge_a, r.edge_b) not in edges:
            problems.append(f"record {i}: {r.edge_a}-{r.edge_b} is not an edge")
        if r.direction not in ("ab", "ba"):
            problems.append(f"record {i}: bad direction {r.direction!r}")
        if not 1 <= r.bits <= tr.capacity_bits:
            problems.append(f"record {i}: {r.bits} bits exceeds budget {tr.capacity_bits}")
        if r.round < prev:
            problems.append(f"record {i}: round {r.round} after round {prev}")
        if not 1 <= r.round <= tr.rounds:
            problems.append(f"record {i}: round {r.round} outside 1..{tr.rounds}")
        slot = (r.round, r.edge_a, r.edge_b, r.direction)
        if slot in seen:
            problems.append(f"record {i}: second message in one edge slot")
        seen.add(slot)
        if tr.duplex == "half":
            other = (r.round, r.edge_a, r.edge_b, "ba" if r.direction == "ab" else "ab")
            if other in seen:
                problems.append(f"record {i}: both directions used in a half-duplex round")
        prev = max(prev, r.round)
    return problems


def verify_trace(tr: SimulationTrace, t: Topology) -> bool:
    return not trace_problems(tr, t)


def concat_traces(traces: Sequence[SimulationTrace], capacity_bits: int, duplex: str = "full",
                  answer: Any = None) -> SimulationTrace:
    """Run phases back to back: each phase starts after the previous one's last round."""
    records: list[TraceRecord] = []
    offset = 0
    for tr in traces:
        records.extend(r._replace(round=r.round + offset) for r in tr.records)
        offset += tr.rounds
    return SimulationTrace(offset, records, capacity_bits, duplex, answer)


class BitQueue:
    """FIFO of items that leave in pieces of at most B bits per round.

    An item counts as delivered in the round its last bit is sent.  Items
    are packed back to back, so one message may finish several small items.
    """

    def __init__(self):
        self._q: deque[list] = deque()

    def push(self, item: Any, bits: int, tag: int = 0) -> None:
        self._q.append([item, max(1, int(bits)), tag])

    def __len__(self) -> int:
        return len(self._q)

    @property
    def pending_bits(self) -> int:
        return sum(x[1] for x in self._q)

    def pop(self, budget: int) -> Message | None:
        if not self._q:
            return None
        tag = self._q[0][2]
        used = 0
        done = []
        while self._q and used < budget:
            head = self._q[0]
            take = min(budget - used, head[1])
            head[1] -= take
            used += take
            if head[1] == 0:
                done.append(head[0])
                self._q.popleft()
        return Message(tuple(done), used, tag)
