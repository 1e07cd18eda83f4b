"""Reference protocols: the two-round snapshot reader and two fast strawmen.

``slow-2round`` reads in one round and, when the returned versions are not
causally closed, fetches the missing versions in a second round. Multi-server
write transactions use a client-driven prepare/commit.

``fast-generic`` is the same protocol with the second round switched off. With
``helping`` enabled its servers hold committed writes back while they trade
HELP messages carrying the reads they served, which keeps reads consistent for
as long as the exchange continues.

``naive-invisible`` answers every read with the latest value and remembers
nothing about it.
"""
from __future__ import annotations

from ..history import ValueId
from .api import Process, ProtocolBinding, Server
from .common import DepContext, ObjectStore, VersionRecord
from ..simnet import Payload

ROT_REQ = "ROT_REQ"
ROT_RESP = "ROT_RESP"
ROT_REQ2 = "ROT_REQ2"
WRITE_PREPARE = "WRITE_PREPARE"
WRITE_COMMIT = "WRITE_COMMIT"
WRITE_ACK = "WRITE_ACK"
HELP = "HELP"


def _exported_deps(rec: VersionRecord | None) -> tuple:
    if rec is None:
        return ()
    sibs = tuple((s, rec.lamport) for s in rec.siblings if s != rec.value)
    return tuple(rec.deps) + sibs


class SnapshotClient(Process):
    def __init__(self, pid: str, placement: dict, second_round: bool = True):
        super().__init__(pid, placement)
        self.second_round = second_round
        self.clock = 0
        self.ctx = DepContext()
        self.txn = None
        self.rounds = 0

    def on_invoke(self, txn, ctx):
        self.txn = txn
        self.got: dict[str, tuple] = {}
        self.results: dict[str, ValueId] = {}
        self.rounds = 0
        if txn.reads:
            self._read_round(ctx, {o: None for o in txn.reads})
        else:
            self._start_writes(ctx)

    # reads -----------------------------------------------------------------
    def _read_round(self, ctx, wanted: dict):
        self.rounds += 1
        self.waiting = set()
        for server, objs in self.servers_for(wanted).items():
            self.waiting.add(server)
            if self.rounds == 1:
                payload = Payload(ROT_REQ, self.txn.id,
                                  data={"objects": objs, "lamport": self.clock})
            else:
                payload = Payload(ROT_REQ2, self.txn.id,
                                  data={"objects": objs, "snapshot": wanted[objs[0]],
                                        "lamport": self.clock})
            ctx.send(server, payload)

    def _snapshot(self) -> tuple[int, dict]:
        """The snapshot all round-1 answers must be valid at, and the objects that are not."""
        snap = max([lam for _, lam in self.ctx.items()] + [g[1] for g in self.got.values()],
                   default=0)
        stale = {o: snap for o, g in self.got.items() if g[3] < snap}
        return snap, stale

    def _reads_done(self, ctx):
        for v, lam, deps, _ in self.got.values():
            self.ctx.add(v, lam)
            self.ctx.update(deps)
        self.results = {o: rec[0] for o, rec in self.got.items()}
        if self.txn.writes:
            self._start_writes(ctx)
        else:
            self._end(ctx)

    # writes ----------------------------------------------------------------
    def _start_writes(self, ctx):
        writes = self.txn.writes
        by_server = self.servers_for(writes)
        deps = tuple(self.ctx.items())
        sibs = tuple(sorted(writes.values()))
        self.waiting = set(by_server)
        self.proposals = {}
        self.ts = 0
        one_phase = len(by_server) == 1
        self.phase = "commit" if one_phase else "prepare"
        for server, objs in by_server.items():
            data = {"writes": [writes[o] for o in objs], "deps": deps, "lamport": self.clock,
                    "siblings": sibs, "one_phase": one_phase}
            ctx.send(server, Payload(WRITE_COMMIT if one_phase else WRITE_PREPARE, self.txn.id,
                                     data=data))

    def on_message(self, msg, ctx):
        p = msg.payload
        if self.txn is None or p.txn != self.txn.id:
            return
        if p.kind == ROT_RESP:
            self.clock = max(self.clock, p.data["clock"])
            for v, lam, deps, valid in p.data["versions"]:
                self.got[v.object] = (v, lam, tuple(deps), valid)
            self.waiting.discard(msg.src)
            if self.waiting:
                return
            missing = {}
            if self.rounds == 1 and self.second_round:
                _, missing = self._snapshot()
            if missing:
                self._read_round(ctx, missing)
            else:
                self._reads_done(ctx)
        elif p.kind == WRITE_ACK:
            self.clock = max(self.clock, p.data["lamport"])
            self.waiting.discard(msg.src)
            if self.phase == "prepare":
                self.proposals[msg.src] = p.data["lamport"]
                if not self.waiting:
                    self.ts = max(self.proposals.values())
                    self.phase = "commit"
                    self.waiting = set(self.proposals)
                    for server in sorted(self.proposals):
                        ctx.send(server, Payload(WRITE_COMMIT, self.txn.id,
                                                 data={"ts": self.ts, "one_phase": False}))
            else:
                self.ts = max(self.ts, p.data["lamport"])
                if not self.waiting:
                    for v in self.txn.writes.values():
                        self.ctx.add(v, self.ts)
                    self.clock = max(self.clock, self.ts)
                    self._end(ctx)

    def _end(self, ctx):
        results = self.results
        self.txn = None
        ctx.finish(results)


class SnapshotServer(Server):
    """Multiversion server for the two-round protocol and its fast variant.

    ``helping`` turns on the held-back visibility exchange; ``help_rounds`` is
    how many HELP messages a server must receive before showing a write
    (``None`` means never, and the exchange never stops).
    """

    def __init__(self, pid, stored, placement, helping: bool = False, help_rounds: int | None = None):
        super().__init__(pid, stored, placement)
        self.store = ObjectStore()
        self.clock = 0
        self.pending: dict[str, list[VersionRecord]] = {}
        self.helping = helping
        self.help_rounds = help_rounds
        self.help: dict[str, dict] = {}
        self.served: dict[str, dict] = {}
        self.oldtx: dict[str, dict] = {}
        self.parked: list = []

    def visible(self, value: ValueId) -> bool:
        rec = self.store.find(value)
        return rec is not None and rec.visible

    def _version(self, obj: str, rot: str | None):
        if rot is not None and obj in self.oldtx.get(rot, {}):
            v = self.oldtx[rot][obj]
            return v, self.store.find(v)
        rec = self.store.latest_visible(obj)
        return (rec.value if rec else ValueId.initial(obj)), rec

    def on_message(self, msg, ctx):
        p = msg.payload
        d = p.data
        self.clock = max(self.clock, d.get("lamport", d.get("ts", 0)))
        if p.kind == ROT_REQ:
            self.clock += 1
            versions = []
            for o in d["objects"]:
                v, rec = self._version(o, p.txn if self.helping else None)
                versions.append((v, rec.lamport if rec else 0, _exported_deps(rec),
                                 self._valid_until(o)))
                if self.helping:
                    self.served.setdefault(p.txn, {})[o] = v
            ctx.send(msg.src, Payload(ROT_RESP, p.txn, tuple(v for v, _, _, _ in versions),
                                      {"versions": versions, "clock": self.clock, "round": 1}))
        elif p.kind == ROT_REQ2:
            self.clock = max(self.clock, d["snapshot"])
            self.parked.append(msg)
            self._serve_parked(ctx)
        elif p.kind == WRITE_PREPARE:
            self.clock += 1
            recs = [VersionRecord(v.object, v, self.clock, tuple(d["deps"]), False, p.txn,
                                  tuple(d["siblings"])) for v in d["writes"]]
            for rec in recs:
                self.store.add(rec)
            self.pending[p.txn] = recs
            ctx.send(msg.src, Payload(WRITE_ACK, p.txn, data={"phase": "prepare",
                                                              "lamport": self.clock}))
        elif p.kind == WRITE_COMMIT:
            if d.get("one_phase"):
                self.clock += 1
                recs = [VersionRecord(v.object, v, self.clock, tuple(d["deps"]), False, p.txn,
                                      tuple(d["siblings"])) for v in d["writes"]]
                for rec in recs:
                    self.store.add(rec)
                self._show(recs, ctx)
                ts = self.clock
            else:
                ts = d["ts"]
                recs = self.pending.pop(p.txn)
                for rec in recs:
                    rec.lamport = ts
                if self.helping:
                    self._start_help(p.txn, recs, ctx)
                else:
                    self._show(recs, ctx)
            ctx.send(msg.src, Payload(WRITE_ACK, p.txn, data={"phase": "commit", "lamport": ts}))
            self._serve_parked(ctx)
        elif p.kind == HELP:
            self._on_help(msg, ctx)

    def _valid_until(self, obj: str) -> int:
        """Last snapshot at which the current answer for ``obj`` is still the newest.

        Later prepares propose above the clock; pending ones may commit at their proposal.
        """
        bound = self.clock
        for recs in self.pending.values():
            for rec in recs:
                if rec.object == obj:
                    bound = min(bound, rec.lamport - 1)
        return bound

    def _blocked(self, objs, snap: int) -> bool:
        return any(rec.object in objs and rec.lamport <= snap
                   for recs in self.pending.values() for rec in recs)

    def _serve_parked(self, ctx):
        """Answer snapshot reads once no prepared write could still land at or below them."""
        still = []
        for msg in self.parked:
            d = msg.payload.data
            snap = d["snapshot"]
            if self._blocked(set(d["objects"]), snap):
                still.append(msg)
                continue
            versions = []
            for o in d["objects"]:
                best = None
                for rec in self.store.versions.get(o, ()):
                    if rec.visible and rec.lamport <= snap and (best is None or rec.key > best.key):
                        best = rec
                v = best.value if best else ValueId.initial(o)
                versions.append((v, best.lamport if best else 0, _exported_deps(best), snap))
            ctx.send(msg.src, Payload(ROT_RESP, msg.payload.txn, tuple(v for v, _, _, _ in versions),
                                      {"versions": versions, "clock": self.clock, "round": 2}))
        self.parked = still

    def _show(self, recs, ctx):
        for rec in recs:
            rec.visible = True
            ctx.note_visible(rec.value)

    # helping exchange --------------------------------------------------------
    def _peers(self, recs) -> list[str]:
        sibs = recs[0].siblings if recs else ()
        return sorted({self.placement[s.object] for s in sibs} - {self.pid})

    def _pin(self):
        """Fold served reads into the table and pin every listed read to old values."""
        for rot, vals in self.served.items():
            entry = self.oldtx.setdefault(rot, {})
            for o, v in vals.items():
                entry.setdefault(o, v)
        for rot, entry in self.oldtx.items():
            for o in self.stored:
                if o not in entry:
                    rec = self.store.latest_visible(o)
                    entry[o] = rec.value if rec else ValueId.initial(o)

    def _table(self) -> dict:
        return {rot: dict(vals) for rot, vals in sorted(self.oldtx.items())}

    def _start_help(self, txn, recs, ctx):
        st = self.help.setdefault(txn, {"received": 0})
        st["recs"] = recs
        self._pin()
        for peer in self._peers(recs):
            ctx.send(peer, Payload(HELP, txn, data={"round": 1, "oldtx": self._table(),
                                                    "lamport": self.clock}))
        self._maybe_show(txn, ctx)

    def _on_help(self, msg, ctx):
        d = msg.payload.data
        txn = msg.payload.txn
        for rot, vals in d["oldtx"].items():
            entry = self.oldtx.setdefault(rot, {})
            for o, v in vals.items():
                entry.setdefault(o, v)
        self._pin()
        st = self.help.setdefault(txn, {"received": 0})
        st["received"] += 1
        r = d["round"]
        if self.help_rounds is None or r < 2 * self.help_rounds:
            ctx.send(msg.src, Payload(HELP, txn, data={"round": r + 1, "oldtx": self._table(),
                                                       "lamport": self.clock}))
        self._maybe_show(txn, ctx)

    def _maybe_show(self, txn, ctx):
        st = self.help[txn]
        if "recs" not in st or st.get("shown") or self.help_rounds is None:
            return
        if st["received"] >= self.help_rounds:
            st["shown"] = True
            self._show(st["recs"], ctx)

    def snapshot(self):
        snap = {"clock": self.clock, "store": self.store.snapshot()}
        if self.helping:
            snap["oldtx"] = self._table()
        return snap


class NaiveClient(Process):
    def on_invoke(self, txn, ctx):
        self.txn = txn
        self.results = {}
        self.waiting = set()
        if txn.reads:
            for server, objs in self.servers_for(txn.reads).items():
                self.waiting.add(server)
                ctx.send(server, Payload(ROT_REQ, txn.id, data={"objects": objs}))
        else:
            for server, objs in self.servers_for(txn.writes).items():
                self.waiting.add(server)
                ctx.send(server, Payload(WRITE_COMMIT, txn.id,
                                         data={"writes": [txn.writes[o] for o in objs]}))

    def on_message(self, msg, ctx):
        p = msg.payload
        if p.kind == ROT_RESP:
            for v in p.values:
                self.results[v.object] = v
        self.waiting.discard(msg.src)
        if not self.waiting:
            ctx.finish(self.results)


class NaiveServer(Server):
    def __init__(self, pid, stored, placement):
        super().__init__(pid, stored, placement)
        self.latest: dict[str, ValueId] = {}
        self.seen: set[ValueId] = set()

    def visible(self, value):
        return value in self.seen

    def on_message(self, msg, ctx):
        p = msg.payload
        if p.kind == ROT_REQ:
            vals = tuple(self.latest.get(o, ValueId.initial(o)) for o in p.data["objects"])
            ctx.send(msg.src, Payload(ROT_RESP, p.txn, vals))
        elif p.kind == WRITE_COMMIT:
            for v in p.data["writes"]:
                self.latest[v.object] = v
                self.seen.add(v)
                ctx.note_visible(v)
            ctx.send(msg.src, Payload(WRITE_ACK, p.txn))

    def snapshot(self):
        return {"latest": dict(self.latest)}


def slow_two_round() -> ProtocolBinding:
    return ProtocolBinding(
        "slow-2round", lambda c, pl: SnapshotClient(c, pl),
        lambda s, st, pl: SnapshotServer(s, st, pl),
        generic_txns=True, fast_rot=False,
        description="two-round causally closed reads; prepare/commit writes")


def fast_generic(helping: bool = False, help_rounds: int | None = None) -> ProtocolBinding:
    name = "fast-generic-helping" if helping else "fast-generic"
    if helping and help_rounds is not None:
        name = f"fast-generic-help{help_rounds}"
    return ProtocolBinding(
        name, lambda c, pl: SnapshotClient(c, pl, second_round=False),
        lambda s, st, pl: SnapshotServer(s, st, pl, helping=helping, help_rounds=help_rounds),
        generic_txns=True, fast_rot=True,
        description="slow-2round without its second round" + (", with helping" if helping else ""),
        options={"helping": helping, "help_rounds": help_rounds})


def naive_invisible() -> ProtocolBinding:
    return ProtocolBinding(
        "naive-invisible", NaiveClient, NaiveServer, fast_rot=True,
        description="one round, latest value, no trace")
