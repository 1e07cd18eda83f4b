"""Objects, values, transactions and client histories.

A history is a flat, time-ordered list of :class:`OpEvent` records. Everything
else (per-client transactions, the causality graph) is derived from it.
"""
from __future__ import annotations

import json
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

from .errors import BudgetExceeded, DanglingRead

ObjectId = str

TXN_START = "txn-start"
TXN_END = "txn-end"
READ_RETURN = "read-return"
WRITE_ACK = "write-ack"
EVENT_KINDS = (TXN_START, TXN_END, READ_RETURN, WRITE_ACK)

MAX_CLOSURE_OPS = 2000


@dataclass(frozen=True, order=True)
class ValueId:
    """A written value. ``bottom`` marks the initial value of an object."""

    object: ObjectId
    writer: str = ""
    seq: int = 0
    bottom: bool = False

    def __post_init__(self):
        if not self.object:
            raise ValueError("object id must be non-empty")
        if self.bottom and (self.writer or self.seq):
            raise ValueError("bottom carries no writer/seq")

    @classmethod
    def initial(cls, obj: ObjectId) -> "ValueId":
        return cls(obj, bottom=True)

    def to_json(self) -> dict:
        return {"writer": self.writer, "seq": self.seq, "bottom": self.bottom}

    @classmethod
    def from_json(cls, obj: ObjectId, d: dict) -> "ValueId":
        if d.get("bottom"):
            return cls.initial(obj)
        return cls(obj, d["writer"], int(d["seq"]))

    def __str__(self):
        if self.bottom:
            return f"{self.object}=⊥"
        return f"{self.object}={self.writer}.{self.seq}"


def bottom(obj: ObjectId) -> ValueId:
    return ValueId.initial(obj)


@dataclass(frozen=True)
class Transaction:
    """A transaction request: the objects it reads and the values it writes."""

    id: str
    client: str
    reads: frozenset = frozenset()
    writes: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "reads", frozenset(self.reads))
        if not self.reads and not self.writes:
            raise ValueError(f"transaction {self.id} reads and writes nothing")
        for obj, v in self.writes.items():
            if v.object != obj or v.bottom:
                raise ValueError(f"bad write {obj} -> {v}")

    @property
    def read_only(self) -> bool:
        return not self.writes

    @property
    def objects(self) -> frozenset:
        return self.reads | frozenset(self.writes)

    def __hash__(self):
        return hash(self.id)


@dataclass(frozen=True)
class OpEvent:
    time: int
    client: str
    txn: str
    kind: str
    object: ObjectId | None = None
    value: ValueId | None = None

    def to_json(self) -> dict:
        d = {"time": self.time, "client": self.client, "txn": self.txn, "kind": self.kind}
        if self.object is not None:
            d["object"] = self.object
        if self.value is not None:
            d["value"] = self.value.to_json()
        return d

    @classmethod
    def from_json(cls, d: dict) -> "OpEvent":
        obj = d.get("object")
        value = ValueId.from_json(obj, d["value"]) if "value" in d else None
        return cls(int(d["time"]), d["client"], d["txn"], d["kind"], obj, value)


@dataclass
class TxnRecord:
    """A transaction as observed in a history, with its results."""

    id: str
    client: str
    start: int
    end: int
    reads: dict  # object -> ValueId returned
    writes: dict  # object -> ValueId written

    @property
    def read_only(self) -> bool:
        return not self.writes

    @property
    def has_write(self) -> bool:
        return bool(self.writes)

    def as_transaction(self) -> Transaction:
        return Transaction(self.id, self.client, frozenset(self.reads), dict(self.writes))


class History:
    """Client-observable events of one run."""

    def __init__(self, events: Iterable[OpEvent] = ()):
        self.events: list[OpEvent] = list(events)
        self._txns: list[TxnRecord] | None = None

    def __len__(self):
        return len(self.events)

    def __iter__(self) -> Iterator[OpEvent]:
        return iter(self.events)

    def __eq__(self, other):
        return isinstance(other, History) and self.events == other.events

    def append(self, ev: OpEvent) -> None:
        self.events.append(ev)
        self._txns = None

    def transactions(self) -> list[TxnRecord]:
        """Completed transactions in start order. Incomplete ones are skipped."""
        if self._txns is not None:
            return self._txns
        open_: dict[str, TxnRecord] = {}
        done: list[TxnRecord] = []
        for ev in self.events:
            if ev.kind == TXN_START:
                if ev.txn in open_:
                    raise ValueError(f"duplicate start for {ev.txn}")
                open_[ev.txn] = TxnRecord(ev.txn, ev.client, ev.time, -1, {}, {})
            elif ev.kind == TXN_END:
                rec = open_.pop(ev.txn)
                rec.end = ev.time
                done.append(rec)
            else:
                rec = open_.get(ev.txn)
                if rec is None:
                    raise ValueError(f"{ev.kind} outside transaction {ev.txn}")
                if ev.kind == READ_RETURN:
                    rec.reads[ev.object] = ev.value
                elif ev.kind == WRITE_ACK:
                    rec.writes[ev.object] = ev.value
                else:
                    raise ValueError(f"unknown event kind {ev.kind!r}")
        done.sort(key=lambda r: (r.start, r.client, r.id))
        self._txns = done
        return done

    def clients(self) -> list[str]:
        return sorted({ev.client for ev in self.events})

    def restrict(self, txn_ids) -> "History":
        keep = set(txn_ids)
        return History(ev for ev in self.events if ev.txn in keep)

    def validate(self) -> None:
        """Check the structural invariants; raise ValueError on the first violation."""
        starts, ends = {}, {}
        for ev in self.events:
            if ev.kind == TXN_START:
                starts[ev.txn] = ev.time
            elif ev.kind == TXN_END:
                if ev.txn not in starts or ev.txn in ends:
                    raise ValueError(f"unbalanced end for {ev.txn}")
                if ev.time <= starts[ev.txn]:
                    raise ValueError(f"{ev.txn} ends at or before its start")
                ends[ev.txn] = ev.time
        per_client = defaultdict(list)
        for rec in self.transactions():
            per_client[rec.client].append(rec)
        for recs in per_client.values():
            for a, b in zip(recs, recs[1:]):
                if b.start <= a.end:
                    raise ValueError(f"client {a.client} overlaps {a.id} and {b.id}")

    # serialization ---------------------------------------------------------
    def dumps(self) -> str:
        return "".join(json.dumps(ev.to_json(), sort_keys=True) + "\n" for ev in self.events)

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "History":
        return cls(OpEvent.from_json(json.loads(line)) for line in text.splitlines() if line.strip())

    @classmethod
    def load(cls, path) -> "History":
        return cls.loads(Path(path).read_text())


def project_client(h: History, client: str) -> list[TxnRecord]:
    return [t for t in h.transactions() if t.client == client]


@dataclass(frozen=True)
class Op:
    """One read or write inside a transaction."""

    txn: str
    client: str
    kind: str  # "r" or "w"
    object: ObjectId
    value: ValueId

    def __str__(self):
        return f"{self.kind}({self.value})@{self.txn}"


class CausalGraph:
    """Transitive closure of the causality relation over operation instances.

    ``reach[i]`` is a bitset of the operations that operation ``i`` causally
    precedes.
    """

    def __init__(self, ops: list[Op], base_edges: Iterable[tuple[int, int]]):
        self.ops = ops
        self.index = {op: i for i, op in enumerate(ops)}
        n = len(ops)
        reach = [0] * n
        for a, b in base_edges:
            reach[a] |= 1 << b
        for k in range(n):
            bit, rk = 1 << k, reach[k]
            if not rk:
                continue
            for i in range(n):
                if reach[i] & bit:
                    reach[i] |= rk
        self.reach = reach
        self._succ = None

    def precedes(self, a: Op, b: Op) -> bool:
        return bool(self.reach[self.index[a]] >> self.index[b] & 1)

    def edges(self) -> set[tuple[Op, Op]]:
        out = set()
        for i, r in enumerate(self.reach):
            j = 0
            while r:
                if r & 1:
                    out.add((self.ops[i], self.ops[j]))
                r >>= 1
                j += 1
        return out

    def is_strict_partial_order(self) -> bool:
        return all(not (r >> i & 1) for i, r in enumerate(self.reach))

    def txn_successors(self) -> dict[str, set[str]]:
        """For each transaction, the transactions some of its ops causally precede.

        Program order inside a transaction does not count. A transaction is
        listed among its own successors only when one of its ops reaches itself,
        or when it and another transaction reach each other.
        """
        if self._succ is not None:
            return self._succ
        union: dict[str, int] = defaultdict(int)
        looped = set()
        for i, op in enumerate(self.ops):
            union[op.txn] |= self.reach[i]
            if self.reach[i] >> i & 1:
                looped.add(op.txn)
        succ = {}
        for t, r in union.items():
            found = set()
            while r:
                low = r & -r
                found.add(self.ops[low.bit_length() - 1].txn)
                r ^= low
            found.discard(t)
            succ[t] = found
        for t in union:
            if t in looped or any(t in succ[u] for u in succ[t]):
                succ[t].add(t)
        self._succ = succ
        return succ


def history_ops(h: History) -> list[Op]:
    ops = []
    for rec in h.transactions():
        for obj, v in rec.reads.items():
            ops.append(Op(rec.id, rec.client, "r", obj, v))
        for obj, v in rec.writes.items():
            ops.append(Op(rec.id, rec.client, "w", obj, v))
    return ops


def causal_precedes(h: History) -> CausalGraph:
    """Causality graph: program order, read-from, transitive closure."""
    ops = history_ops(h)
    if len(ops) > MAX_CLOSURE_OPS:
        raise BudgetExceeded(f"{len(ops)} operations exceed closure budget {MAX_CLOSURE_OPS}")
    writer_of = {}
    for i, op in enumerate(ops):
        if op.kind == "w":
            writer_of[op.value] = i
    edges = []
    last_by_client: dict[str, int] = {}
    for i, op in enumerate(ops):
        prev = last_by_client.get(op.client)
        if prev is not None:
            edges.append((prev, i))
        last_by_client[op.client] = i
        if op.kind == "r" and not op.value.bottom:
            w = writer_of.get(op.value)
            if w is None:
                raise DanglingRead(f"{op} reads a value nobody wrote")
            edges.append((w, i))
    return CausalGraph(ops, edges)
