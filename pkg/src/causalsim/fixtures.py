"""Hand-written histories used by tests, docs and the ``check`` command."""
from __future__ import annotations

from .history import READ_RETURN, TXN_END, TXN_START, WRITE_ACK, History, OpEvent, ValueId


class HistoryBuilder:
    """Append whole transactions to a history with explicit start/end ticks."""

    def __init__(self):
        self.h = History()
        self._n = 0

    def txn(self, client: str, start: int, end: int, reads=None, writes=None, txn_id=None) -> str:
        self._n += 1
        tid = txn_id or f"T{self._n}"
        self.h.append(OpEvent(start, client, tid, TXN_START))
        for obj, v in sorted((reads or {}).items()):
            self.h.append(OpEvent(end, client, tid, READ_RETURN, obj, v))
        for obj, v in sorted((writes or {}).items()):
            self.h.append(OpEvent(end, client, tid, WRITE_ACK, obj, v))
        self.h.append(OpEvent(end, client, tid, TXN_END))
        return tid

    def build(self) -> History:
        self.h.events.sort(key=lambda e: e.time)
        return History(self.h.events)


def V(obj: str, writer: str, seq: int) -> ValueId:
    return ValueId(obj, writer, seq)


def sole_wot_history() -> History:
    """A sole write-only transaction (x, y); one read sees (x0, y), a later one (x, y).

    The prefix values x0 and y0 come from unrelated clients, so the first read
    alone could still be serialized; only the pair cannot.
    """
    x0, y0 = V("X", "ca", 1), V("Y", "cb", 1)
    x, y = V("X", "cw", 1), V("Y", "cw", 2)
    b = HistoryBuilder()
    b.txn("ca", 1, 3, writes={"X": x0}, txn_id="Wx0")
    b.txn("cb", 1, 3, writes={"Y": y0}, txn_id="Wy0")
    b.txn("cw", 10, 20, writes={"X": x, "Y": y}, txn_id="WOT")
    b.txn("cr", 12, 18, reads={"X": x0, "Y": y}, txn_id="ROT")
    b.txn("cr", 30, 32, reads={"X": x, "Y": y}, txn_id="ROT2")
    return b.build()


def mixed_pair_history() -> History:
    """w(X)x causally precedes w(Y)y; a read returns (x*, y), a later read (x, y)."""
    xs, ys = V("X", "ca", 1), V("Y", "cb", 1)
    x, y = V("X", "c", 1), V("Y", "c", 2)
    b = HistoryBuilder()
    b.txn("ca", 1, 3, writes={"X": xs}, txn_id="Wxs")
    b.txn("cb", 1, 3, writes={"Y": ys}, txn_id="Wys")
    b.txn("c", 10, 12, writes={"X": x}, txn_id="Wx")
    b.txn("c", 13, 15, writes={"Y": y}, txn_id="Wy")
    b.txn("cr", 5, 20, reads={"X": xs, "Y": y}, txn_id="ROT")
    b.txn("cr", 30, 32, reads={"X": x, "Y": y}, txn_id="ROT1")
    return b.build()
