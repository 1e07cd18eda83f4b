"""Verdicts over recorded histories and message logs.

All checkers are pure functions. A failing verdict always carries a witness
that can be replayed on its own (see :func:`replay_witness`).
"""
from __future__ import annotations

import itertools
import json
import random
from bisect import bisect_right
from collections import defaultdict
from dataclasses import dataclass, field

from .errors import BudgetExceeded, NoProbeReads, PreconditionViolation
from .history import CausalGraph, History, TxnRecord, ValueId, causal_precedes
from .simnet import MessageLog, StateDiff, canon, is_server

SERIALIZATION_BUDGET = 12


@dataclass
class Verdict:
    checker: str
    passed: bool
    witness: dict | None = None
    info: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.passed and self.witness is None:
            raise ValueError("a failing verdict needs a witness")

    def __bool__(self):
        return self.passed

    def to_json(self) -> dict:
        d = {"checker": self.checker, "pass": self.passed}
        if self.witness is not None:
            d["witness"] = canon(self.witness)
        return d

    def dumps(self) -> str:
        return json.dumps(self.to_json(), sort_keys=True)


# -- transactional causal serialization ---------------------------------------

def _budget(writes: list, per_client: dict, budget: int) -> None:
    biggest = max((len(v) for v in per_client.values()), default=0)
    if len(writes) + biggest > budget:
        raise BudgetExceeded(f"{len(writes)} write transactions + {biggest} client transactions "
                             f"exceed brute-force budget {budget}")


def _reads_ok(rec: TxnRecord, last: dict) -> bool:
    for obj, v in rec.reads.items():
        cur = last.get(obj)
        if v.bottom:
            if cur is not None:
                return False
        elif cur != v:
            return False
    return True


def _forced_edges(members: dict, preds: dict, client_ids: set) -> dict:
    """Add orderings implied by the client's reads and close transitively.

    A read r(x)v forces every other write of x that must precede the reader to
    precede v's writer, and forces the reader before any write of x that must
    follow v's writer. A bottom read goes before every write of x.
    """
    preds = {t: set(p) for t, p in preds.items()}
    writer = {}
    for t, rec in members.items():
        for v in rec.writes.values():
            writer[v] = t

    def closure():
        changed = True
        while changed:
            changed = False
            for t in preds:
                extra = set()
                for p in preds[t]:
                    extra |= preds[p]
                if not extra <= preds[t]:
                    preds[t] |= extra
                    changed = True

    closure()
    for _ in range(len(members) + 1):
        added = False
        for t in client_ids:
            rec = members[t]
            for obj, v in rec.reads.items():
                writers_x = [u for u, r in members.items() if obj in r.writes and u != t]
                if v.bottom:
                    for u in writers_x:
                        if t not in preds[u]:
                            preds[u].add(t)
                            added = True
                    continue
                src = writer.get(v)
                if src is None:
                    continue
                for u in writers_x:
                    if u == src:
                        continue
                    if u in preds[t] and u not in preds[src]:
                        preds[src].add(u)
                        added = True
                    if src in preds[u] and t not in preds[u]:
                        preds[u].add(t)
                        added = True
        if not added:
            break
        closure()
    return preds


def _search(members: dict, preds: dict, client_ids: set) -> list | None:
    ids = sorted(members, key=lambda t: (members[t].start, t))
    pos = {t: i for i, t in enumerate(ids)}
    pred_mask = [0] * len(ids)
    for t, ps in preds.items():
        for p in ps:
            pred_mask[pos[t]] |= 1 << pos[p]
    full = (1 << len(ids)) - 1
    dead: set = set()
    order: list[str] = []

    def dfs(mask: int, last: dict) -> bool:
        if mask == full:
            return True
        key = (mask, tuple(sorted(last.items())))
        if key in dead:
            return False
        for i, t in enumerate(ids):
            if mask >> i & 1 or pred_mask[i] & ~mask:
                continue
            rec = members[t]
            if t in client_ids and not _reads_ok(rec, last):
                continue
            nxt = dict(last)
            nxt.update(rec.writes)
            order.append(t)
            if dfs(mask | 1 << i, nxt):
                return True
            order.pop()
        dead.add(key)
        return False

    return list(order) if dfs(0, {}) else None


def _client_serialization(txns: dict, succ: dict, writes: list, client_ids: list, prune: bool):
    members = {t: txns[t] for t in set(writes) | set(client_ids)}
    cset = set(client_ids)
    for t in members:
        if t in succ.get(t, ()):
            return None, {"reason": "causality cycle", "transactions": sorted(
                u for u in members if u in succ.get(t, ()) and t in succ.get(u, ()))}
    preds = {t: {u for u in members if u != t and t in succ.get(u, ())} for t in members}
    if prune:
        preds = _forced_edges(members, preds, cset)
        for t, ps in preds.items():
            if t in ps:
                return None, {"reason": "forced order cycle", "transactions": [t]}
    order = _search(members, preds, cset)
    if order is None:
        return None, {"reason": "no serialization"}
    return order, None


def check_causal_serialization(h: History, *, graph: CausalGraph | None = None,
                               subset=None, clients=None, prune: bool = True,
                               budget: int = SERIALIZATION_BUDGET, minimize: bool = True) -> Verdict:
    """Search, per client, for a total order satisfying the serialization clauses.

    ``graph`` lets a sub-history be checked against the causality of the full
    history it came from; ``subset`` limits the transactions considered.
    ``clients`` maps client -> transaction ids to keep for that client.
    """
    if graph is None:
        graph = causal_precedes(h)
    succ = graph.txn_successors()
    txns = {t.id: t for t in h.transactions()}
    if subset is not None:
        keep = set(subset)
        txns = {k: v for k, v in txns.items() if k in keep}
    writes = sorted(t for t, r in txns.items() if r.has_write)
    per_client: dict[str, list] = defaultdict(list)
    for t, r in sorted(txns.items(), key=lambda kv: (kv[1].start, kv[0])):
        if clients is None or t in clients.get(r.client, ()):
            per_client[r.client].append(t)
    _budget(writes, per_client, budget)
    serializations = {}
    for c in sorted(per_client):
        order, why = _client_serialization(txns, succ, writes, per_client[c], prune)
        if order is not None:
            serializations[c] = order
            continue
        kept = list(per_client[c])
        if minimize:
            for t in list(kept):
                if not txns[t].read_only:
                    continue
                trial = [u for u in kept if u != t]
                o, _ = _client_serialization(txns, succ, writes, trial, prune)
                if o is None:
                    kept = trial
        witness = {"client": c, **why, "client_transactions": kept,
                   "reads": {t: dict(txns[t].reads) for t in kept if txns[t].reads},
                   "subset": sorted(txns)}
        return Verdict("causal", False, witness)
    return Verdict("causal", True, info={"serializations": serializations})


def replay_witness(h: History, witness: dict, graph: CausalGraph | None = None) -> Verdict:
    """Re-run the causal check on exactly the transactions a witness names."""
    c = witness["client"]
    return check_causal_serialization(h, graph=graph or causal_precedes(h),
                                      subset=witness["subset"],
                                      clients={c: set(witness["client_transactions"])},
                                      minimize=False)


def validate_serialization(h: History, client: str, order: list[str],
                           graph: CausalGraph | None = None) -> list[str]:
    """Check one total order clause by clause; return the list of problems."""
    txns = {t.id: t for t in h.transactions()}
    graph = graph or causal_precedes(h)
    succ = graph.txn_successors()
    problems = []
    required = {t for t, r in txns.items() if r.has_write or r.client == client}
    if set(order) != required or len(order) != len(required):
        problems.append("order does not contain exactly the required transactions")
    pos = {t: i for i, t in enumerate(order)}
    last: dict[str, ValueId] = {}
    for t in order:
        rec = txns[t]
        if rec.client == client:
            for obj, v in rec.reads.items():
                cur = last.get(obj)
                if v.bottom and cur is not None:
                    problems.append(f"clause 2: {t} read {v} after write {cur}")
                if not v.bottom and cur != v:
                    problems.append(f"clause 1: {t} read {v} but last write is {cur}")
        last.update(rec.writes)
    for a in order:
        for b in succ.get(a, ()):
            if b in pos and a != b and pos[a] > pos[b]:
                problems.append(f"clause 3: {a} causally precedes {b} but is ordered after it")
    return problems


def oracle_causal_serialization(h: History, max_txns: int = 8) -> bool:
    """Exhaustive check: try every permutation, no pruning, own causality closure."""
    txns = {t.id: t for t in h.transactions()}
    if len(txns) > max_txns:
        raise BudgetExceeded("oracle only handles tiny histories")
    # transaction-level causality: program order + read-from, closed by DFS
    edges = defaultdict(set)
    by_client = defaultdict(list)
    for r in sorted(txns.values(), key=lambda r: r.start):
        by_client[r.client].append(r.id)
    for ids in by_client.values():
        for a, b in zip(ids, ids[1:]):
            edges[a].add(b)
    writer = {v: r.id for r in txns.values() for v in r.writes.values()}
    for r in txns.values():
        for v in r.reads.values():
            if not v.bottom:
                edges[writer[v]].add(r.id)

    def reach(a):
        seen, stack = set(), [a]
        while stack:
            for b in edges[stack.pop()]:
                if b not in seen:
                    seen.add(b)
                    stack.append(b)
        return seen

    after = {t: reach(t) for t in txns}
    for c in by_client:
        members = [t for t, r in txns.items() if r.has_write or r.client == c]
        ok = False
        for perm in itertools.permutations(members):
            pos = {t: i for i, t in enumerate(perm)}
            if any(b in pos and (a == b or pos[a] > pos[b]) for a in perm for b in after[a]):
                continue
            last = {}
            good = True
            for t in perm:
                rec = txns[t]
                if rec.client == c:
                    for obj, v in rec.reads.items():
                        if (v.bottom and obj in last) or (not v.bottom and last.get(obj) != v):
                            good = False
                            break
                if not good:
                    break
                last.update(rec.writes)
            if good:
                ok = True
                break
        if not ok:
            return False
    return True


def sample_windows(h: History, rng: random.Random, samples: int = 8, window: int = 3,
                   budget: int = SERIALIZATION_BUDGET) -> list[tuple[str, list, list]]:
    """Pick (client, client txns, write txns) sub-histories that fit the budget.

    Each sample is a run of consecutive transactions of one client plus the
    writes it read from and the writes that overlap it in time.
    """
    txns = h.transactions()
    by_id = {t.id: t for t in txns}
    writer = {v: t.id for t in txns for v in t.writes.values()}
    writes = [t for t in txns if t.has_write]
    per_client = defaultdict(list)
    for t in txns:
        per_client[t.client].append(t)
    clients = sorted(per_client)
    out = []
    for _ in range(samples):
        if not clients:
            break
        c = rng.choice(clients)
        mine = per_client[c]
        i = rng.randrange(len(mine))
        win = mine[i:i + window]
        lo, hi = win[0].start, win[-1].end
        chosen: list[str] = []
        for t in win:
            for v in t.reads.values():
                src = writer.get(v)
                if src and src not in chosen and src not in {t.id for t in win}:
                    chosen.append(src)
        near = sorted((w for w in writes if w.client != c and w.id not in chosen
                       and w.end >= lo - 20 and w.start <= hi),
                      key=lambda w: (abs(w.start - lo), w.id))
        own_writes = [t.id for t in win if t.has_write]
        room = budget - len(win) - len(own_writes)
        chosen = chosen[:max(room, 0)]
        for w in near:
            if len(chosen) >= room:
                break
            chosen.append(w.id)
        out.append((c, [t.id for t in win], sorted(set(chosen) | set(own_writes))))
    return out


def check_sampled(h: History, rng: random.Random, samples: int = 8,
                  graph: CausalGraph | None = None) -> Verdict:
    graph = graph or causal_precedes(h)
    checked = 0
    for c, mine, ws in sample_windows(h, rng, samples):
        v = check_causal_serialization(h, graph=graph, subset=set(mine) | set(ws),
                                       clients={c: set(mine)})
        checked += 1
        if not v.passed:
            return v
    return Verdict("causal", True, info={"samples": checked})


# -- progress -----------------------------------------------------------------

def check_progress(h: History, log: MessageLog, quiescence: int) -> Verdict:
    """Finite-run eventual visibility: reads starting at ``quiescence`` see the newest writes.

    A post-quiescence read r(x)u is fine against a write w(x)v when u = v or
    u's writing transaction ended no earlier than v's started.
    """
    for m in log:
        if m.sent_at < quiescence < m.deliver_at:
            raise PreconditionViolation(f"message {m.id} still in flight at quiescence")
    txns = h.transactions()
    writes: dict[str, list[TxnRecord]] = defaultdict(list)
    end_of: dict[ValueId, int] = {}
    for t in txns:
        for obj, v in t.writes.items():
            writes[obj].append(t)
            end_of[v] = t.end
    probes = defaultdict(list)
    for t in txns:
        if t.start >= quiescence:
            for obj, v in t.reads.items():
                probes[obj].append((t, v))
    missing = sorted(o for o in writes if not probes[o])
    if missing:
        raise NoProbeReads(f"no post-quiescence read of {', '.join(missing)}")
    for obj in sorted(writes):
        for reader, u in probes[obj]:
            for w in writes[obj]:
                v = w.writes[obj]
                if u == v:
                    continue
                if u.bottom or end_of.get(u, -1) < w.start:
                    return Verdict("progress", False, {
                        "kind": "stale-forever", "object": obj, "read_txn": reader.id,
                        "returned": u, "newer_write": v, "write_txn": w.id,
                        "quiescence": quiescence})
    return Verdict("progress", True, info={"objects": sorted(writes)})


# -- fastness -----------------------------------------------------------------

class LogIndex:
    """Per-transaction and per-server views of a finished log, for repeated audits."""

    def __init__(self, log: MessageLog):
        self.by_txn = defaultdict(list)
        inputs = defaultdict(list)
        for m in log:
            self.by_txn[m.txn].append(m)
            if is_server(m.src) and is_server(m.dst) and m.recv_seq is not None:
                inputs[m.dst].append(m)
        self.server_inputs = {s: sorted(ms, key=lambda m: m.recv_seq) for s, ms in inputs.items()}
        self._seqs = {s: [m.recv_seq for m in ms] for s, ms in self.server_inputs.items()}

    def inputs_between(self, server: str, lo: int, hi: int) -> list:
        """Server-origin messages ``server`` received with lo < recv_seq <= hi."""
        seqs = self._seqs.get(server, [])
        return self.server_inputs.get(server, [])[bisect_right(seqs, lo):bisect_right(seqs, hi)]


def audit_fastness(h: History, log: MessageLog, txn: str, index: LogIndex | None = None) -> Verdict:
    """One message each way per server, and no server-to-server input while answering."""
    rec = next((t for t in h.transactions() if t.id == txn), None)
    if rec is None:
        raise PreconditionViolation(f"unknown transaction {txn}")
    index = index or LogIndex(log)
    mine = index.by_txn.get(txn, [])
    per_server = defaultdict(lambda: {"to": [], "from": []})
    extra = []
    for m in mine:
        if m.src == rec.client and is_server(m.dst):
            per_server[m.dst]["to"].append(m)
        elif m.dst == rec.client and is_server(m.src):
            per_server[m.src]["from"].append(m)
        else:
            extra.append(m)
    for server, io in sorted(per_server.items()):
        if len(io["to"]) > 1 or len(io["from"]) > 1:
            extra.extend(io["to"][1:] + io["from"][1:])
    if extra:
        return Verdict("fastness", False, {"kind": "extra messages", "messages": [
            m.to_json() for m in sorted(extra, key=lambda m: m.id)]})
    for server, io in sorted(per_server.items()):
        if not io["to"] or not io["from"]:
            continue
        req, resp = io["to"][0], io["from"][0]
        if req.recv_seq is None:
            continue
        waited = index.inputs_between(server, req.recv_seq, resp.send_seq)
        if waited:
            return Verdict("fastness", False, {"kind": "server waited", "server": server,
                                               "messages": [m.to_json() for m in waited]})
    return Verdict("fastness", True, info={"servers": sorted(per_server)})


def rot_rounds(log: MessageLog, client: str, txn: str, index: LogIndex | None = None) -> int:
    """Number of request rounds a client sent to its busiest server for ``txn``."""
    counts = defaultdict(int)
    for m in (index.by_txn.get(txn, []) if index else log):
        if m.txn == txn and m.src == client and is_server(m.dst):
            counts[m.dst] += 1
    return max(counts.values(), default=0)


# -- visibility ---------------------------------------------------------------

def audit_visibility(diff: StateDiff) -> Verdict:
    """Classify one probe: visible if its absence changes anything the servers did.

    An empty diff only witnesses invisibility for this one schedule.
    """
    if not isinstance(diff, StateDiff):
        raise PreconditionViolation("audit_visibility needs a StateDiff from paired_run")
    cls = "visible" if not diff.empty else "invisible-witnessed"
    return Verdict("visibility", True, info={"classification": cls, "visible": not diff.empty,
                                             "servers": sorted(diff.servers)})


# -- one version --------------------------------------------------------------

def check_one_version(h: History, log: MessageLog, txn: str, placement: dict) -> Verdict:
    """Each response reveals at most one version per object, only for read objects its
    server stores; together the responses and the result cover every read exactly once."""
    rec = next((t for t in h.transactions() if t.id == txn), None)
    if rec is None or not rec.reads:
        raise PreconditionViolation(f"{txn} is not a read-containing transaction")
    reads = set(rec.reads)
    covered = set()
    for m in log:
        if m.txn != txn or m.dst != rec.client or not is_server(m.src):
            continue
        seen = set()
        for v in m.payload.values:
            o = v.object
            if o in seen:
                return Verdict("one-version", False, {"kind": "two versions", "object": o,
                                                      "message": m.to_json()})
            if o not in reads or placement.get(o) != m.src:
                return Verdict("one-version", False, {"kind": "foreign version", "object": o,
                                                      "message": m.to_json()})
            seen.add(o)
        covered |= seen
    if covered != reads:
        return Verdict("one-version", False, {"kind": "missing versions",
                                              "objects": sorted(reads - covered)})
    if set(rec.reads) != reads:
        return Verdict("one-version", False, {"kind": "result mismatch"})
    return Verdict("one-version", True)
