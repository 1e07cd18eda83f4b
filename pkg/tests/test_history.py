import random

import pytest
from hypothesis import given, settings

from causalsim.errors import BudgetExceeded, DanglingRead
from causalsim.fixtures import HistoryBuilder, sole_wot_history
from causalsim.history import (MAX_CLOSURE_OPS, History, Op, OpEvent, Transaction, ValueId,
                               causal_precedes, history_ops, project_client)

from conftest import histories, random_history


def V(o, w, s):
    return ValueId(o, w, s)


def test_value_id_bottom_and_order():
    b = ValueId.initial("X")
    assert b.bottom and str(b) == "X=⊥"
    assert str(V("X", "c0", 1)) == "X=c0.1"
    assert ValueId.from_json("X", V("X", "c0", 3).to_json()) == V("X", "c0", 3)
    assert ValueId.from_json("X", b.to_json()) == b


def test_transaction_validation():
    with pytest.raises(ValueError):
        Transaction("t", "c0")
    with pytest.raises(ValueError):
        Transaction("t", "c0", writes={"X": V("Y", "c0", 1)})
    t = Transaction("t", "c0", reads={"X"})
    assert t.read_only and t.objects == {"X"}


def test_program_order_edge():
    b = HistoryBuilder()
    b.txn("c1", 1, 2, writes={"x": V("x", "c1", 1)})
    b.txn("c1", 3, 4, reads={"y": ValueId.initial("y")})
    g = causal_precedes(b.build())
    w, r = g.ops
    assert g.precedes(w, r) and not g.precedes(r, w)


def test_read_from_edge():
    b = HistoryBuilder()
    b.txn("c1", 1, 2, writes={"x": V("x", "c1", 1)})
    b.txn("c2", 3, 4, reads={"x": V("x", "c1", 1)})
    g = causal_precedes(b.build())
    assert g.precedes(*g.ops)


def test_transitive_edge_through_other_object():
    # C1: w(X)x then w(Y)y; C2: r(Y)y then r(X)x*
    xs = V("X", "c0", 1)
    b = HistoryBuilder()
    b.txn("c0", 1, 2, writes={"X": xs})
    b.txn("c1", 3, 4, writes={"X": V("X", "c1", 1)})
    b.txn("c1", 5, 6, writes={"Y": V("Y", "c1", 2)})
    b.txn("c2", 7, 8, reads={"Y": V("Y", "c1", 2)})
    b.txn("c2", 9, 10, reads={"X": xs})
    g = causal_precedes(b.build())
    wx = Op("T2", "c1", "w", "X", V("X", "c1", 1))
    rx = Op("T5", "c2", "r", "X", xs)
    assert g.precedes(wx, rx)


def test_dangling_read():
    b = HistoryBuilder()
    b.txn("c0", 1, 2, reads={"X": V("X", "c9", 1)})
    with pytest.raises(DanglingRead):
        causal_precedes(b.build())


def test_closure_budget():
    b = HistoryBuilder()
    for i in range(MAX_CLOSURE_OPS + 1):
        b.txn("c0", 2 * i + 1, 2 * i + 2, writes={"X": V("X", "c0", i + 1)})
    with pytest.raises(BudgetExceeded):
        causal_precedes(b.build())


def test_project_client():
    assert project_client(History(), "c0") == []
    b = HistoryBuilder()
    b.txn("c1", 1, 2, reads={"X": ValueId.initial("X")}, txn_id="T1")
    b.txn("c2", 2, 5, reads={"X": ValueId.initial("X")}, txn_id="T3")
    b.txn("c1", 3, 4, reads={"X": ValueId.initial("X")}, txn_id="T2")
    assert [t.id for t in project_client(b.build(), "c1")] == ["T1", "T2"]


def test_projection_counts_sum():
    rng = random.Random(7)
    b = HistoryBuilder()
    clock = {c: 0 for c in ("c0", "c1", "c2")}
    for i in range(30):
        c = rng.choice(sorted(clock))
        b.txn(c, clock[c] + 1, clock[c] + 2, reads={"X": ValueId.initial("X")})
        clock[c] += 2
    h = b.build()
    assert sum(len(project_client(h, c)) for c in h.clients()) == 30


def test_jsonl_roundtrip_and_validate():
    h = sole_wot_history()
    h.validate()
    again = History.loads(h.dumps())
    assert again == h and again.dumps() == h.dumps()


def test_validate_rejects_overlap():
    h = History([OpEvent(1, "c0", "a", "txn-start"), OpEvent(2, "c0", "b", "txn-start"),
                 OpEvent(3, "c0", "a", "txn-end"), OpEvent(4, "c0", "b", "txn-end")])
    with pytest.raises(ValueError):
        h.validate()


@settings(max_examples=150, deadline=None)
@given(histories(max_txns=8))
def test_causality_is_strict_partial_order_when_acyclic(h):
    g = causal_precedes(h)
    n = len(g.ops)
    # transitivity: closure is idempotent
    for i in range(n):
        for j in range(n):
            if g.reach[i] >> j & 1:
                assert g.reach[j] & ~g.reach[i] == 0
    if g.is_strict_partial_order():
        assert all(not (g.reach[i] >> i & 1) for i in range(n))


@settings(max_examples=100, deadline=None)
@given(histories(max_txns=8))
def test_read_from_edges_match_values(h):
    ops = history_ops(h)
    writer = {op.value: op for op in ops if op.kind == "w"}
    for op in ops:
        if op.kind == "r" and not op.value.bottom:
            w = writer[op.value]
            assert (w.object, w.value) == (op.object, op.value)


def test_single_client_order_is_total():
    h = random_history(random.Random(3), max_txns=6, clients=("c0",))
    g = causal_precedes(h)
    ops = g.ops
    for i in range(len(ops)):
        for j in range(i + 1, len(ops)):
            assert g.precedes(ops[i], ops[j])
