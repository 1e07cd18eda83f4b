"""Scripted adversarial schedules.

Two scenarios on a two-server world (X on s0, Y on s1):

``eimp`` commits a write transaction (x, y) after x0 and y0 are visible and
then delivers the messages it triggers one at a time. Server-to-server
messages are held and released one per round. At every step boundary two
probe reads are forked off: one reaches s0 now and s1 only after the next
delivery, the other the reverse. A probe returning a mixed pair is confirmed
with a follow-up read and the causal checker.

``e12`` lets a reader's request reach s0 before w(X)x and holds its request to
s1 until the tick after w(Y)y becomes visible there, where w(X)x causally
precedes w(Y)y. The read is then audited for fastness, for visibility with a
paired run, and for consistency with a later read of both objects.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Any

from .checkers import (audit_fastness, audit_visibility, check_causal_serialization,
                       check_progress)
from .errors import PreconditionViolation, ProtocolShapeMismatch
from .history import TXN_END, Transaction, ValueId
from .protocols import ProtocolBinding, get_protocol
from .simnet import ClientScript, MessageLog, Override, Schedule, Simulator, is_server, paired_run

OBJECTS = ("X", "Y")
PROBE = "probe"
DEFAULT_K = 6


def _binding(protocol) -> ProtocolBinding:
    return get_protocol(protocol) if isinstance(protocol, str) else protocol


def _ended(sim: Simulator, txn: str) -> bool:
    return any(ev.kind == TXN_END and ev.txn == txn for ev in sim.history.events)


def _result(sim: Simulator, txn: str) -> dict:
    rec = next(t for t in sim.history.transactions() if t.id == txn)
    return dict(rec.reads)


@dataclass
class ScenarioReport:
    scenario: str
    protocol: str
    fast: bool
    visible: bool | None
    consistent: bool
    progress: bool | None
    witness: Any = None
    classification: str = ""
    details: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"scenario": self.scenario, "protocol": self.protocol, "fast": self.fast,
               "visible": self.visible, "consistent": self.consistent,
               "progress": self.progress, "classification": self.classification}
        if self.witness is not None:
            out["witness"] = self.witness
        out["details"] = self.details
        return out

    def dumps(self) -> str:
        from .simnet import canon
        return json.dumps(canon(self.to_json()), sort_keys=True, indent=2)


@dataclass
class Scenario:
    name: str
    params: dict

    def run(self, protocol) -> ScenarioReport:
        binding = _binding(protocol)
        if self.name == "eimp":
            return _run_eimp(binding, **self.params)
        if self.name == "e12":
            return _run_e12(binding, **self.params)
        raise ValueError(f"unknown scenario {self.name!r}")


def scenario_eimp(k: int = DEFAULT_K, seed: int = 0) -> Scenario:
    if k < 1:
        raise ValueError("k must be at least 1")
    return Scenario("eimp", {"k": k, "seed": seed})


def scenario_e12(seed: int = 0) -> Scenario:
    return Scenario("e12", {"seed": seed})


def get_scenario(name: str, **params) -> Scenario:
    if name == "eimp":
        return scenario_eimp(**params)
    if name == "e12":
        params.pop("k", None)
        return scenario_e12(**params)
    raise ValueError(f"unknown scenario {name!r}")


# -- eimp -----------------------------------------------------------------------

def _prefix(binding: ProtocolBinding, seed: int) -> Simulator:
    """x0 and y0 written by independent clients and fully settled."""
    sim = Simulator(binding, 2, OBJECTS, Schedule(seed=seed, delay_min=1, delay_max=3))
    sim.invoke("ca", Transaction("Wx0", "ca", writes={"X": ValueId("X", "ca", 1)}), at=1)
    sim.invoke("cb", Transaction("Wy0", "cb", writes={"Y": ValueId("Y", "cb", 1)}), at=1)
    sim.run()
    return sim


def _adv_match(m) -> bool:
    return is_server(m.dst) and not m.src.startswith(PROBE)


def _next_step(sim: Simulator):
    """The message the adversary delivers next: client-origin first, then server-origin."""
    held = sim.held_messages()
    for phase in ("client", "server"):
        for m in held:
            if is_server(m.src) == (phase == "server"):
                return m, phase
    return None, None


def _deliver(sim: Simulator, msg) -> None:
    sim.release("adv", only=lambda m: m.id == msg.id)
    sim.run()


def _describe(m) -> dict:
    return {"src": m.src, "dst": m.dst, "kind": m.kind, "txn": m.txn}


def _probe(sim: Simulator, step: int, first: str, x: ValueId, y: ValueId) -> dict:
    """Fork, read X and Y with ``first`` answered before the next delivery, the other after."""
    f = sim.fork()
    cid = f"{PROBE}{step}{first}"
    tid = f"P{step}{first}"
    at = f.now + 1
    other = [s for s in f.servers if s != first][0]
    f.add_override(Override({"src": cid, "dst": first}, deliver_at=at + 1, once=True))
    f.add_override(Override({"src": cid, "dst": other}, hold="late", once=True))
    f.invoke(cid, Transaction(tid, cid, reads=frozenset(OBJECTS)), at=at)
    f.run(at + 1)
    nxt, _ = _next_step(f)
    if nxt is not None:
        _deliver(f, nxt)
    f.release("late")
    blocked = not f.run_until(lambda s: _ended(s, tid), limit=200_000)
    if blocked:
        # the read waits on something the adversary holds: let the rest of the world run
        _unhold(f)
        if not f.run_until(lambda s: _ended(s, tid), limit=200_000):
            raise PreconditionViolation(f"probe {tid} never completed")
    got = _result(f, tid)
    fast = audit_fastness(f.history, f.log, tid)
    fresh = {o: got[o] == v for o, v in (("X", x), ("Y", y))}
    out = {"probe": tid, "first": first, "result": {o: str(v) for o, v in sorted(got.items())},
           "fast": fast.passed and not blocked}
    if blocked:
        out["outcome"] = "blocked"
    elif all(fresh.values()):
        out["outcome"] = "fresh"
    elif not any(fresh.values()):
        out["outcome"] = "stale"
    else:
        out["outcome"] = "mixed"
        out["confirm"] = _confirm(f, cid, step, first)
    return out


def _unhold(f: Simulator) -> None:
    f.drop_override(next(o for o in f.schedule.overrides if o.hold == "adv"))
    for tok in list(f.held):
        f.release(tok)


def _confirm(f: Simulator, cid: str, step: int, first: str) -> dict:
    """Let everything settle briefly, read again, and run the causal checker."""
    _unhold(f)
    f.run(f.now + 200)
    tid = f"P{step}{first}-2"
    f.invoke(cid, Transaction(tid, cid, reads=frozenset(OBJECTS)))
    if not f.run_until(lambda s: _ended(s, tid), limit=200_000):
        raise PreconditionViolation(f"follow-up {tid} never completed")
    h = f.history.restrict([t.id for t in f.history.transactions() if t.end <= f.now])
    v = check_causal_serialization(h)
    return {"consistent": v.passed, "witness": v.witness,
            "second": {o: str(u) for o, u in sorted(_result(f, tid).items())}}


def _run_eimp(binding: ProtocolBinding, k: int, seed: int = 0) -> ScenarioReport:
    if not binding.generic_txns:
        raise ProtocolShapeMismatch(f"{binding.name} has no multi-object write transactions")
    sim = _prefix(binding, seed)
    x, y = ValueId("X", "cw", 1), ValueId("Y", "cw", 2)
    t_w = sim.now + 1
    sim.hold(_adv_match, "adv")
    sim.invoke("cw", Transaction("WOT", "cw", writes={"X": x, "Y": y}), at=t_w)
    sim.run()
    steps, probes = [], []
    violation = None
    rounds = 0
    while True:
        for first in sim.servers:
            p = _probe(sim, len(steps), first, x, y)
            probes.append(p)
            if p["outcome"] == "mixed" and not p["confirm"]["consistent"]:
                violation = violation or p
        if violation is not None:
            break
        nxt, phase = _next_step(sim)
        if nxt is None or (phase == "server" and rounds >= k):
            break
        rounds += phase == "server"
        steps.append({**_describe(nxt), "phase": phase})
        _deliver(sim, nxt)
    quiescence = sim.now
    inter_server = sum(1 for m in sim.log if m.sent_at >= t_w and is_server(m.src)
                       and is_server(m.dst) and m.recv_seq is not None)
    final = "Pfinal"
    sim.invoke(f"{PROBE}final", Transaction(final, f"{PROBE}final", reads=frozenset(OBJECTS)))
    final_blocked = not sim.run_until(lambda s: _ended(s, final), limit=200_000)
    progress = None
    if not final_blocked:
        delivered = MessageLog(m for m in sim.log if m.recv_seq is not None)
        progress = check_progress(sim.history, delivered, quiescence)
    _unhold(sim)
    sim.finish(sim.now + 200)
    fast = all(p["fast"] for p in probes)
    consistent = violation is None
    if not fast:
        cls = "escapes by slowness"
    elif not consistent:
        cls = "inconsistent"
    elif progress is not None and not progress.passed:
        cls = "no progress"
    else:
        cls = "unexpected: fast, consistent and live"
    witness = None
    if violation is not None:
        witness = violation["confirm"]["witness"]
    elif progress is not None and not progress.passed:
        witness = progress.witness
    return ScenarioReport(
        "eimp", binding.name, fast, None, consistent,
        None if progress is None else progress.passed, witness, cls,
        {"k": k, "rounds": rounds, "steps": steps, "probes": probes,
         "final_blocked": final_blocked,
         "inter_server_messages": inter_server, "final": {
             o: str(v) for o, v in sorted(_result(sim, final).items())}})


# -- e12 ------------------------------------------------------------------------

def _e12_world(binding: ProtocolBinding, seed: int):
    sched = Schedule(seed=seed, delay_min=1, delay_max=3)
    xs, ys = ValueId("X", "ca", 1), ValueId("Y", "cb", 1)
    x, y = ValueId("X", "c", 1), ValueId("Y", "c", 2)
    prefix = [ClientScript("ca", [Transaction("Wxs", "ca", writes={"X": xs})], start=1),
              ClientScript("cb", [Transaction("Wys", "cb", writes={"Y": ys})], start=1)]
    # every prefix message lands by tick 1 + 2 * 3
    t0 = 10
    writer = ClientScript("c", [Transaction("Wx", "c", writes={"X": x}),
                                Transaction("Wy", "c", writes={"Y": y})], start=t0 + 2)
    probe = ClientScript("cr", [Transaction("ROT", "cr", reads=frozenset(OBJECTS))], start=t0)
    return sched, prefix + [writer], probe, (xs, ys, x, y), t0


def _run_e12(binding: ProtocolBinding, seed: int = 0) -> ScenarioReport:
    if binding.generic_txns:
        raise ProtocolShapeMismatch(f"{binding.name} runs generic transactions; e12 needs writes "
                                    "outside transactions")
    sched, workload, probe, (xs, ys, x, y), t0 = _e12_world(binding, seed)
    px, py = "s0", "s1"

    # reference run: detect when y turns visible at its server, release right after
    sim = Simulator(binding, 2, OBJECTS, sched)
    sim.add_override(Override({"src": "cr", "dst": px, "txn": "ROT"}, deliver_at=t0 + 1))
    sim.hold({"src": "cr", "dst": py, "txn": "ROT"}, "cr->PY")
    for s in workload + [probe]:
        sim.submit(s)
    seen = sim.run_until(lambda s: s.procs[py].visible(y), limit=200_000)
    tau_y = sim.now if seen else None
    sim.release("cr->PY", at=sim.now + 1)
    sim.run()
    quiescence = sim.now
    sim.invoke("cr", Transaction("ROT1", "cr", reads=frozenset(OBJECTS)), at=quiescence + 1)
    sim.finish()
    h, log = sim.history, sim.log

    fast = audit_fastness(h, log, "ROT")
    causal = check_causal_serialization(h)
    progress = check_progress(h, log, quiescence)

    release_at = (tau_y if tau_y is not None else quiescence) + 1

    def prepare(s: Simulator):
        s.add_override(Override({"src": "cr", "dst": px, "txn": "ROT"}, deliver_at=t0 + 1))
        s.add_override(Override({"src": "cr", "dst": py, "txn": "ROT"}, deliver_at=release_at))

    _, _, diff = paired_run(binding, 2, OBJECTS, workload, probe, sched, prepare=prepare)
    vis = audit_visibility(diff)
    visible = vis.info["visible"]
    rot = {o: str(v) for o, v in sorted(_result(sim, "ROT").items())}
    rot1 = {o: str(v) for o, v in sorted(_result(sim, "ROT1").items())}
    if binding.clock_access:
        cls = "circumvention"
    elif not fast.passed:
        cls = "not fast"
    elif visible and causal.passed:
        cls = "fast, visible, consistent"
    elif not visible and not causal.passed:
        cls = "fast, invisible, inconsistent"
    else:
        cls = "trichotomy violated"
    witness = None
    if not causal.passed:
        witness = {"rot": rot, "rot1": rot1, "checker": causal.witness}
    return ScenarioReport(
        "e12", binding.name, fast.passed, visible, causal.passed, progress.passed, witness, cls,
        {"tau_y": tau_y, "release_at": release_at, "rot": rot, "rot1": rot1,
         "diff_servers": sorted(diff.servers), "diff_messages": len(diff.messages)})
