"""Fast, visible read-only transactions with asynchronous trace propagation.

Writes happen outside transactions. A server acknowledges a write at once but
only marks it visible after every server holding one of the write's
dependencies has answered a VIS_REQ with its OldTx table. Reads are answered
in one round: from the OldTx entry if the transaction has one here, otherwise
with the newer of the latest visible value and whatever the client already
observed. Every read leaves a trace in ``current``; a trace moves into OldTx
when a newer value of the object it read becomes visible.
"""
from __future__ import annotations

from ..history import ValueId
from ..simnet import Payload
from .api import Process, ProtocolBinding, Server
from .common import DepContext, ObjectStore, VersionRecord, version_key

D1_WRITE = "D1_WRITE"
D1_WACK = "D1_WACK"
D1_ROT_REQ = "D1_ROT_REQ"
D1_ROT_RESP = "D1_ROT_RESP"
VIS_REQ = "VIS_REQ"
VIS_RESP = "VIS_RESP"


class VisibleClient(Process):
    def __init__(self, pid, placement):
        super().__init__(pid, placement)
        self.clock = 0
        self.ctx = DepContext()
        self.txn = None

    def on_invoke(self, txn, ctx):
        self.txn = txn
        self.results = {}
        self.lamports = {}
        if txn.writes:
            (obj, value), = txn.writes.items()
            self.waiting = {self.placement[obj]}
            ctx.send(self.placement[obj], Payload(D1_WRITE, txn.id, data={
                "value": value, "lamport": self.clock, "ctx": tuple(self.ctx.items())}))
            return
        self.waiting = set()
        deps = tuple(self.ctx.items())
        for server, objs in self.servers_for(txn.reads).items():
            self.waiting.add(server)
            ctx.send(server, Payload(D1_ROT_REQ, txn.id, data={
                "objects": objs, "lamport": self.clock, "ctx": deps}))

    def on_message(self, msg, ctx):
        p = msg.payload
        if self.txn is None or p.txn != self.txn.id:
            return
        self.clock = max(self.clock, p.data["lamport"])
        if p.kind == D1_WACK:
            (value,) = self.txn.writes.values()
            self.ctx.add(value, p.data["lamport"])
        else:
            for v in p.values:
                self.results[v.object] = v
                self.ctx.add(v, p.data["lamports"][v.object])
        self.waiting.discard(msg.src)
        if not self.waiting:
            self.txn = None
            ctx.finish(self.results)


class VisibleServer(Server):
    def __init__(self, pid, stored, placement):
        super().__init__(pid, stored, placement)
        self.clock = 0
        self.store = ObjectStore()
        self.queues: dict[str, list[VersionRecord]] = {o: [] for o in stored}
        self.propagating: dict[ValueId, dict] = {}
        self.parked: list[tuple] = []
        # txn -> {"values": {obj: ValueId}, "ctx": ((ValueId, lamport), ...)}
        self.current: dict[str, dict] = {}
        self.oldtx: dict[str, dict] = {}

    def visible(self, value: ValueId) -> bool:
        if value.bottom:
            return True
        rec = self.store.find(value)
        return rec is not None and rec.visible

    def _lamport(self, value: ValueId, fallback: int = 0) -> int:
        rec = self.store.find(value)
        return rec.lamport if rec is not None else fallback

    def _newer_of(self, obj: str, ctx_items, base: ValueId) -> ValueId:
        """``base`` or the client's newest observed value of ``obj``, whichever is newer."""
        best = base
        best_key = version_key(base, self._lamport(base))
        for v, lam in ctx_items:
            if v.object != obj:
                continue
            k = version_key(v, self._lamport(v, lam))
            if k >= best_key:
                best, best_key = v, k
        return best

    # -- messages ------------------------------------------------------------
    def on_message(self, msg, ctx):
        p = msg.payload
        d = p.data
        self.clock = max(self.clock, d.get("lamport", 0)) + 1
        if p.kind == D1_WRITE:
            v = d["value"]
            rec = VersionRecord(v.object, v, self.clock, tuple(d["ctx"]), False, p.txn)
            self.store.add(rec)
            self.queues[v.object].append(rec)
            ctx.send(msg.src, Payload(D1_WACK, p.txn, data={"lamport": self.clock}))
            if len(self.queues[v.object]) == 1:
                self._propagate(rec, ctx)
        elif p.kind == D1_ROT_REQ:
            self._read(msg, ctx)
        elif p.kind == VIS_REQ:
            self.parked.append((msg.src, d["for"], tuple(d["needs"])))
            self._serve_parked(ctx)
        elif p.kind == VIS_RESP:
            st = self.propagating[d["for"]]
            st["tables"].append(d["oldtx"])
            st["waiting"].discard(msg.src)
            self._try_show(d["for"], ctx)

    def _read(self, msg, ctx):
        p = msg.payload
        deps = p.data["ctx"]
        out, lamports = [], {}
        for o in p.data["objects"]:
            pinned = self.oldtx.get(p.txn, {}).get("values", {})
            if o in pinned:
                v = pinned[o]
            else:
                rec = self.store.latest_visible(o)
                v = self._newer_of(o, deps, rec.value if rec else ValueId.initial(o))
                entry = self.current.setdefault(p.txn, {"values": {}, "ctx": tuple(deps)})
                entry["values"][o] = v
            out.append(v)
            lamports[o] = self._lamport(v, dict(deps).get(v, 0))
        ctx.send(msg.src, Payload(D1_ROT_RESP, p.txn, tuple(out),
                                  {"lamports": lamports, "lamport": self.clock}))

    # -- propagation -----------------------------------------------------------
    def _propagate(self, rec: VersionRecord, ctx):
        remote: dict[str, list] = {}
        local = set()
        for v, _ in rec.deps:
            server = self.placement[v.object]
            if server == self.pid:
                local.add(v)
            else:
                remote.setdefault(server, []).append(v)
        self.propagating[rec.value] = {"rec": rec, "waiting": set(remote), "local": local,
                                       "tables": []}
        for server in sorted(remote):
            ctx.send(server, Payload(VIS_REQ, rec.txn, data={
                "for": rec.value, "needs": sorted(remote[server]), "lamport": self.clock}))
        self._try_show(rec.value, ctx)

    def _table(self) -> dict:
        return {t: {"values": dict(e["values"]), "ctx": e["ctx"]}
                for t, e in sorted(self.oldtx.items())}

    def _serve_parked(self, ctx):
        still = []
        for src, for_value, needs in self.parked:
            if all(self.visible(v) for v in needs):
                ctx.send(src, Payload(VIS_RESP, None, data={
                    "for": for_value, "oldtx": self._table(), "lamport": self.clock}))
            else:
                still.append((src, for_value, needs))
        self.parked = still

    def _try_show(self, value: ValueId, ctx):
        st = self.propagating.get(value)
        if st is None or st["waiting"] or not all(self.visible(v) for v in st["local"]):
            return
        del self.propagating[value]
        rec = st["rec"]
        obj = rec.object
        for table in st["tables"]:
            for txn, entry in table.items():
                mine = self.oldtx.setdefault(txn, {"values": {}, "ctx": entry["ctx"]})
                for o, v in entry["values"].items():
                    mine["values"].setdefault(o, v)
        for txn in sorted(self.current):
            entry = self.current[txn]
            u = entry["values"].get(obj)
            if u is not None and version_key(u, self._lamport(u)) < rec.key:
                mine = self.oldtx.setdefault(txn, {"values": {}, "ctx": entry["ctx"]})
                mine["values"].setdefault(obj, u)
                del entry["values"][obj]
                if not entry["values"]:
                    del self.current[txn]
        prev = self.store.latest_visible(obj)
        before = prev.value if prev else ValueId.initial(obj)
        for txn in sorted(self.oldtx):
            entry = self.oldtx[txn]
            if obj in entry["values"] or obj in self.current.get(txn, {}).get("values", {}):
                continue
            entry["values"][obj] = self._newer_of(obj, entry["ctx"], before)
        rec.visible = True
        ctx.note_visible(rec.value)
        queue = self.queues[obj]
        queue.remove(rec)
        self._serve_parked(ctx)
        if queue and queue[0].value not in self.propagating:
            self._propagate(queue[0], ctx)
        for other in sorted(self.propagating):
            if rec.value in self.propagating.get(other, {}).get("local", ()):
                self._try_show(other, ctx)

    def snapshot(self):
        return {"clock": self.clock, "store": self.store.snapshot(),
                "current": {t: dict(e["values"]) for t, e in self.current.items()},
                "oldtx": {t: dict(e["values"]) for t, e in self.oldtx.items()}}


def async_visible(name: str = "async-visible") -> ProtocolBinding:
    return ProtocolBinding(name, VisibleClient, VisibleServer, fast_rot=True,
                           description="one-round visible reads; OldTx propagated after writes")
