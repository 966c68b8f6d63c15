import pytest

from faqnet.errors import CapacityViolation, RoundCapExceeded, SchemaError
from faqnet.simulator import (
    BitQueue, Message, NodeProgram, SimulationTrace, TraceRecord, concat_traces, run, trace_problems,
    verify_trace,
)
from faqnet.topology import line_topology

LINE = line_topology(["a", "b", "c"])


class Relay(NodeProgram):
    """Forwards every message to ``target`` one round later."""

    def __init__(self, target=None, start=None):
        self.target = target
        self.queue = [start] if start is not None else []
        self.got = []

    def send(self, rnd):
        if self.queue and self.target:
            return {self.target: Message(self.queue.pop(0), 1)}
        return {}

    def receive(self, rnd, inbox):
        for m in inbox.values():
            self.got.append((rnd, m.payload))
            self.queue.append(m.payload)

    def done(self):
        return not self.queue or self.target is None

    def output(self):
        return self.got


def test_relay_takes_one_round_per_hop():
    progs = {"a": Relay("b", start="hi"), "b": Relay("c"), "c": Relay()}
    tr = run(LINE, progs, capacity_bits=1, answer_player="c")
    assert tr.rounds == 2
    assert tr.answer == [(2, "hi")]
    assert [r.round for r in tr.records] == [1, 2]
    assert verify_trace(tr, LINE)


def test_oversized_message_raises():
    class Big(NodeProgram):
        def done(self):
            return False

        def send(self, rnd):
            return {"b": Message(None, 9)}
    with pytest.raises(CapacityViolation) as exc:
        run(LINE, {"a": Big()}, capacity_bits=8)
    assert exc.value.round_no == 1


def test_non_neighbour_raises():
    class Far(NodeProgram):
        def done(self):
            return False

        def send(self, rnd):
            return {"c": Message(None, 1)}
    with pytest.raises(CapacityViolation):
        run(LINE, {"a": Far()}, capacity_bits=1)


def test_round_cap():
    class Forever(NodeProgram):
        def done(self):
            return False
    with pytest.raises(RoundCapExceeded):
        run(LINE, {"a": Forever()}, capacity_bits=1, round_cap=5)


def test_unknown_node_program_and_duplex():
    with pytest.raises(SchemaError):
        run(LINE, {"z": Relay()}, capacity_bits=1)
    with pytest.raises(SchemaError):
        run(LINE, {}, capacity_bits=1, duplex="simplex")


class Swap(NodeProgram):
    def __init__(self, other, count):
        self.other = other
        self.left = count
        self.got = 0

    def send(self, rnd):
        if self.left:
            self.left -= 1
            return {self.other: Message(1, 1)}
        return {}

    def receive(self, rnd, inbox):
        self.got += len(inbox)

    def done(self):
        return self.left == 0


def test_half_duplex_splits_two_way_rounds():
    t = line_topology(["a", "b"])
    full = run(t, {"a": Swap("b", 3), "b": Swap("a", 3)}, 1)
    half = run(t, {"a": Swap("b", 3), "b": Swap("a", 3)}, 1, duplex="half")
    assert full.rounds == 3
    assert half.rounds == 6
    assert verify_trace(half, t)
    assert verify_trace(full, t)


def test_trace_problems_detects_each_kind():
    bad = SimulationTrace(2, [
        TraceRecord(1, "a", "b", "ab", 2, 0),
        TraceRecord(1, "a", "b", "ab", 1, 0),
        TraceRecord(1, "a", "c", "ab", 1, 0),
        TraceRecord(3, "b", "c", "ba", 1, 0),
    ], capacity_bits=1)
    probs = trace_problems(bad, LINE)
    assert any("exceeds budget" in p for p in probs)
    assert any("second message" in p for p in probs)
    assert any("not an edge" in p for p in probs)
    assert any("outside" in p for p in probs)
    half = SimulationTrace(1, [TraceRecord(1, "a", "b", "ab", 1, 0), TraceRecord(1, "a", "b", "ba", 1, 0)],
                           capacity_bits=1, duplex="half")
    assert any("half-duplex" in p for p in trace_problems(half, LINE))


def test_concat_offsets_rounds():
    one = SimulationTrace(2, [TraceRecord(2, "a", "b", "ab", 1, 0)], 1)
    two = SimulationTrace(3, [TraceRecord(1, "b", "c", "ab", 1, 0)], 1)
    both = concat_traces([one, two], 1)
    assert both.rounds == 5
    assert [r.round for r in both.records] == [2, 3]


def test_csv_has_header_and_summary():
    tr = run(LINE, {"a": Relay("b", start="x"), "b": Relay()}, 1, answer_player="b")
    text = tr.to_csv()
    lines = text.splitlines()
    assert lines[0] == "round,edge_a,edge_b,direction,bits,tag"
    assert lines[1] == "1,a,b,ab,1,0"
    assert lines[-1].startswith("# rounds=1 answer_digest=")


def test_bit_queue_packs_and_splits():
    q = BitQueue()
    q.push("a", 3)
    q.push("b", 2)
    q.push("c", 6)
    m = q.pop(4)
    assert (m.payload, m.bit_len) == (("a",), 4)
    m = q.pop(4)
    assert (m.payload, m.bit_len) == (("b",), 4)
    m = q.pop(4)
    assert (m.payload, m.bit_len) == (("c",), 3)
    assert q.pop(4) is None
