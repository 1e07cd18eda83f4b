"""Timestamp-ordered reads against a global clock.

Clients stamp each transaction with the current tick (ties broken by client
id). Servers keep every stamped version and answer a read with the newest
version stamped strictly below the reader's stamp. The bounded variant
supports multi-object write transactions: every transaction lasts more than
``2u`` ticks and reads compare against ``stamp - 2u``, which is safe as long
as no message takes longer than ``u``.
"""
from __future__ import annotations

from ..history import ValueId
from ..simnet import Payload
from .api import Process, ProtocolBinding, Server

D2_READ = "D2_READ"
D2_WRITE = "D2_WRITE"
D2_RESP = "D2_RESP"


class ClockClient(Process):
    def __init__(self, pid, placement, u: int | None = None):
        super().__init__(pid, placement)
        self.u = u
        self.txn = None

    def on_invoke(self, txn, ctx):
        self.txn = txn
        self.results = {}
        stamp = (ctx.now, self.pid)
        self.waiting = set()
        for server, objs in self.servers_for(txn.reads).items():
            self.waiting.add((server, D2_READ))
            ctx.send(server, Payload(D2_READ, txn.id, data={"objects": objs, "stamp": stamp}))
        for server, objs in self.servers_for(txn.writes).items():
            self.waiting.add((server, D2_WRITE))
            ctx.send(server, Payload(D2_WRITE, txn.id, data={
                "writes": [txn.writes[o] for o in objs], "stamp": stamp}))
        self.timer_pending = self.u is not None
        if self.timer_pending:
            ctx.set_timer(stamp[0] + 2 * self.u + 1)

    def on_message(self, msg, ctx):
        p = msg.payload
        if self.txn is None or p.txn != self.txn.id:
            return
        for v in p.values:
            self.results[v.object] = v
        self.waiting.discard((msg.src, p.data["answers"]))
        self._maybe_end(ctx)

    def on_timer(self, ctx):
        self.timer_pending = False
        self._maybe_end(ctx)

    def _maybe_end(self, ctx):
        if self.txn is not None and not self.waiting and not self.timer_pending:
            self.txn = None
            ctx.finish(self.results)


class ClockServer(Server):
    def __init__(self, pid, stored, placement, u: int | None = None):
        super().__init__(pid, stored, placement)
        self.u = u
        self.versions: dict[str, list] = {o: [] for o in stored}  # [(stamp, ValueId)]

    def visible(self, value: ValueId) -> bool:
        return value.bottom or any(v == value for _, v in self.versions.get(value.object, ()))

    def _cutoff(self, stamp) -> tuple:
        t, client = stamp
        if self.u is None:
            return (t, client)
        return (t - 2 * self.u, client)

    def on_message(self, msg, ctx):
        p = msg.payload
        stamp = tuple(p.data["stamp"])
        if p.kind == D2_WRITE:
            for v in p.data["writes"]:
                self.versions[v.object].append((stamp, v))
                self.versions[v.object].sort()
                ctx.note_visible(v)
            ctx.send(msg.src, Payload(D2_RESP, p.txn, data={"answers": D2_WRITE}))
        elif p.kind == D2_READ:
            cutoff = self._cutoff(stamp)
            out = []
            for o in p.data["objects"]:
                below = [v for s, v in self.versions[o] if s < cutoff]
                out.append(below[-1] if below else ValueId.initial(o))
            ctx.send(msg.src, Payload(D2_RESP, p.txn, tuple(out), {"answers": D2_READ}))

    def snapshot(self):
        return {o: [[list(s), v] for s, v in vs] for o, vs in sorted(self.versions.items())}


def ts_global() -> ProtocolBinding:
    return ProtocolBinding("ts-global", ClockClient, ClockServer, clock_access=True,
                           settle_ticks=1, description="global-clock stamped reads, writes outside transactions")


def ts_global_bounded(u: int = 10, name: str | None = None) -> ProtocolBinding:
    return ProtocolBinding(
        name or "ts-global-bounded",
        lambda c, pl: ClockClient(c, pl, u=u),
        lambda s, st, pl: ClockServer(s, st, pl, u=u),
        clock_access=True, generic_txns=True, settle_ticks=2 * u + 1,
        description=f"global-clock stamped generic transactions assuming delays <= {u}",
        options={"u": u})
