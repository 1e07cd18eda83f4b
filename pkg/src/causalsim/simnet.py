"""Deterministic discrete-event simulation of an asynchronous message-passing system.

Channels are reliable but unordered: every message gets an independent delay
drawn from its channel's own random stream, so adding traffic on one channel
never perturbs the delays of another. Adversarial schedules can force delivery
times or park messages under a hold token until an explicit release.
"""
from __future__ import annotations

import copy
import heapq
import json
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterable

from .errors import ClockAccessDenied, PreconditionViolation, UnreleasedHold
from .history import (READ_RETURN, TXN_END, TXN_START, WRITE_ACK, History, OpEvent,
                      Transaction, ValueId)

_MSG, _TIMER, _INVOKE = 0, 1, 2


@dataclass(frozen=True, order=True)
class ProcessId:
    role: str  # "client" | "server"
    index: int

    def __str__(self):
        return f"{self.role[0]}{self.index}"

    @classmethod
    def parse(cls, s: str) -> "ProcessId":
        role = {"c": "client", "s": "server"}[s[0]]
        return cls(role, int(s[1:]))


def client_id(i: int) -> str:
    return str(ProcessId("client", i))


def server_id(i: int) -> str:
    return str(ProcessId("server", i))


def is_server(pid: str) -> bool:
    return pid.startswith("s")


def canon(obj: Any) -> Any:
    """Deterministic JSON-compatible form of protocol data."""
    if isinstance(obj, ValueId):
        return str(obj)
    if isinstance(obj, dict):
        return {str(canon(k)) if not isinstance(k, str) else k: canon(v)
                for k, v in sorted(obj.items(), key=lambda kv: str(canon(kv[0])))}
    if isinstance(obj, (set, frozenset)):
        return sorted((canon(v) for v in obj), key=lambda v: json.dumps(v, sort_keys=True))
    if isinstance(obj, (list, tuple)):
        return [canon(v) for v in obj]
    if hasattr(obj, "__dataclass_fields__"):
        return {k: canon(getattr(obj, k)) for k in obj.__dataclass_fields__}
    return obj


@dataclass(frozen=True)
class Payload:
    """Protocol message body. ``values`` lists every ValueId the message reveals."""

    kind: str
    txn: str | None = None
    values: tuple = ()
    data: dict = field(default_factory=dict)

    def __hash__(self):
        return hash((self.kind, self.txn, self.values))


@dataclass
class Message:
    id: int
    src: str
    dst: str
    payload: Payload
    sent_at: int
    deliver_at: int
    send_seq: int
    recv_seq: int | None = None
    hold: str | None = None

    @property
    def kind(self) -> str:
        return self.payload.kind

    @property
    def txn(self) -> str | None:
        return self.payload.txn

    def to_json(self) -> dict:
        return {"id": self.id, "src": self.src, "dst": self.dst, "sent_at": self.sent_at,
                "deliver_at": self.deliver_at, "payload_kind": self.kind, "txn": self.txn,
                "send_seq": self.send_seq, "recv_seq": self.recv_seq,
                "values": [{"object": v.object, **v.to_json()} for v in self.payload.values]}

    @classmethod
    def from_json(cls, d: dict) -> "Message":
        """Rebuild a logged message. Payload data is not logged and comes back empty."""
        values = tuple(ValueId.from_json(v["object"], v) for v in d.get("values", ()))
        return cls(d["id"], d["src"], d["dst"], Payload(d["payload_kind"], d.get("txn"), values),
                   d["sent_at"], d["deliver_at"], d.get("send_seq", 0), d.get("recv_seq"))


class MessageLog(list):
    """Every message sent during a run, in send order."""

    def dumps(self) -> str:
        return "".join(json.dumps(m.to_json(), sort_keys=True) + "\n" for m in self)

    def dump(self, path) -> None:
        Path(path).write_text(self.dumps())

    @classmethod
    def loads(cls, text: str) -> "MessageLog":
        return cls(Message.from_json(json.loads(line)) for line in text.splitlines() if line.strip())

    @classmethod
    def load(cls, path) -> "MessageLog":
        return cls.loads(Path(path).read_text())

    def for_txn(self, txn: str) -> list[Message]:
        return [m for m in self if m.txn == txn]


@dataclass
class Override:
    """Adversarial control over matching messages.

    ``match`` is either a predicate on :class:`Message` or a dict of field
    values (``src``, ``dst``, ``kind``, ``txn``) that must all agree. Exactly one
    of ``deliver_at``, ``delay`` or ``hold`` takes effect, in that order.
    """

    match: Callable[[Message], bool] | dict
    deliver_at: int | None = None
    delay: int | None = None
    hold: str | None = None
    once: bool = False
    used: bool = False

    def matches(self, msg: Message) -> bool:
        if self.once and self.used:
            return False
        if callable(self.match):
            return bool(self.match(msg))
        fields = {"src": msg.src, "dst": msg.dst, "kind": msg.kind, "txn": msg.txn}
        return all(fields.get(k) == v for k, v in self.match.items())

    @classmethod
    def from_json(cls, d: dict) -> "Override":
        return cls(match=dict(d.get("match", {})), deliver_at=d.get("deliver_at"),
                   delay=d.get("delay"), hold=d.get("hold"), once=bool(d.get("once", False)))


@dataclass
class Schedule:
    seed: int = 0
    delay_min: int = 1
    delay_max: int = 10
    overrides: list = field(default_factory=list)

    def __post_init__(self):
        if not 1 <= self.delay_min <= self.delay_max:
            raise ValueError("need 1 <= delay_min <= delay_max")

    @classmethod
    def from_json(cls, d: dict) -> "Schedule":
        return cls(int(d.get("seed", 0)), int(d.get("delay_min", 1)), int(d.get("delay_max", 10)),
                   [Override.from_json(o) for o in d.get("overrides", [])])


@dataclass
class ClientScript:
    """A closed-loop client: issue ``txns`` one after another from tick ``start``."""

    client: str
    txns: list
    start: int = 1
    think: int = 1


class Ctx:
    """The only window a handler has onto the simulator."""

    def __init__(self, sim: "Simulator", pid: str):
        self._sim = sim
        self.pid = pid

    def send(self, dst: str, payload: Payload) -> None:
        self._sim._send(self.pid, dst, payload)

    def finish(self, results: dict) -> None:
        self._sim._finish(self.pid, results)

    def note_visible(self, value: ValueId) -> None:
        self._sim.visibility.setdefault((self.pid, value), self._sim.now)

    @property
    def now(self) -> int:
        if not self._sim.clock_access:
            raise ClockAccessDenied(f"{self.pid} read the global clock")
        return self._sim.now

    def set_timer(self, at: int) -> None:
        if not self._sim.clock_access:
            raise ClockAccessDenied(f"{self.pid} set a timer without clock access")
        self._sim._push(max(at, self._sim.now + 1), _TIMER, self.pid)


class Simulator:
    """Single-threaded event loop over client and server processes.

    ``binding`` supplies process objects (see :mod:`causalsim.protocols.api`).
    Events are processed in (tick, class, id) order, so message deliveries at
    the same tick are ordered by message id.
    """

    def __init__(self, binding, n_servers: int, objects: Iterable[str], schedule: Schedule,
                 *, allow_clock: bool = True):
        if n_servers < 2:
            raise ValueError("at least two servers are required")
        self.binding = binding
        self.schedule = copy.deepcopy(schedule)
        self.objects = list(objects)
        self.servers = [server_id(i) for i in range(n_servers)]
        self.placement = {o: self.servers[i % n_servers] for i, o in enumerate(self.objects)}
        if binding.clock_access and not allow_clock:
            raise ClockAccessDenied(f"{binding.name} needs a global clock")
        self.clock_access = binding.clock_access
        self.procs: dict[str, Any] = {}
        for s in self.servers:
            stored = [o for o, p in self.placement.items() if p == s]
            self.procs[s] = binding.make_server(s, stored, dict(self.placement))
        self.now = 0
        self.seq = 0
        self._queue: list = []
        self._next_msg = 0
        self._next_evt = 0
        self._rngs: dict[tuple[str, str], random.Random] = {}
        self.held: dict[str, list[Message]] = {}
        self.log = MessageLog()
        self.history = History()
        self.visibility: dict[tuple[str, ValueId], int] = {}
        self._pending: dict[str, list] = {}
        self._current: dict[str, Transaction] = {}
        self._think: dict[str, int] = {}
        self._started: dict[str, int] = {}

    # -- setup ---------------------------------------------------------------
    def add_client(self, cid: str) -> None:
        if cid not in self.procs:
            self.procs[cid] = self.binding.make_client(cid, dict(self.placement))
            self._pending[cid] = []

    def submit(self, script: ClientScript) -> None:
        for txn in script.txns:
            self.binding.check_txn(txn)
        self.add_client(script.client)
        idle = not self._pending[script.client] and script.client not in self._current
        self._pending[script.client].extend(script.txns)
        self._think[script.client] = script.think
        if idle and script.txns:
            self._push(max(script.start, self.now + 1), _INVOKE, script.client)

    def invoke(self, cid: str, txn: Transaction, at: int | None = None) -> None:
        """Issue a single transaction at tick ``at`` (default: next tick)."""
        self.submit(ClientScript(cid, [txn], start=self.now + 1 if at is None else at))

    def hold(self, match, token: str) -> Override:
        ov = Override(match=match, hold=token)
        self.schedule.overrides.insert(0, ov)
        return ov

    def add_override(self, ov: Override, first: bool = True) -> None:
        if first:
            self.schedule.overrides.insert(0, ov)
        else:
            self.schedule.overrides.append(ov)

    def drop_override(self, ov: Override) -> None:
        self.schedule.overrides = [o for o in self.schedule.overrides if o is not ov]

    def release(self, token: str, at: int | None = None, only=None) -> list[Message]:
        """Deliver parked messages of ``token`` at tick ``at`` (default: next tick)."""
        parked = self.held.get(token, [])
        chosen = [m for m in parked if only is None or only(m)]
        rest = [m for m in parked if m not in chosen]
        if rest:
            self.held[token] = rest
        else:
            self.held.pop(token, None)
        when = self.now + 1 if at is None else at
        for m in chosen:
            m.deliver_at = max(when, m.sent_at + 1, self.now + 1)
            m.hold = None
            self._push(m.deliver_at, _MSG, m)
        return chosen

    def held_messages(self) -> list[Message]:
        return sorted((m for ms in self.held.values() for m in ms), key=lambda m: m.id)

    def fork(self) -> "Simulator":
        return copy.deepcopy(self)

    # -- internals -----------------------------------------------------------
    def _push(self, at: int, cls: int, item) -> None:
        if cls == _MSG:
            key = item.id
        else:
            key = self._next_evt
            self._next_evt += 1
        heapq.heappush(self._queue, (at, cls, key, item))

    def _channel(self, src: str, dst: str) -> random.Random:
        rng = self._rngs.get((src, dst))
        if rng is None:
            rng = self._rngs[(src, dst)] = random.Random(f"{self.schedule.seed}/{src}->{dst}")
        return rng

    def _send(self, src: str, dst: str, payload: Payload) -> None:
        if dst not in self.procs:
            raise PreconditionViolation(f"{src} sent to unknown process {dst}")
        delay = self._channel(src, dst).randint(self.schedule.delay_min, self.schedule.delay_max)
        msg = Message(self._next_msg, src, dst, payload, self.now, self.now + delay, self.seq)
        self._next_msg += 1
        for ov in self.schedule.overrides:
            if ov.matches(msg):
                ov.used = True
                if ov.deliver_at is not None:
                    msg.deliver_at = max(ov.deliver_at, self.now + 1)
                elif ov.delay is not None:
                    msg.deliver_at = self.now + max(1, ov.delay)
                elif ov.hold is not None:
                    msg.hold = ov.hold
                break
        self.log.append(msg)
        if msg.hold is not None:
            self.held.setdefault(msg.hold, []).append(msg)
        else:
            self._push(msg.deliver_at, _MSG, msg)

    def _finish(self, cid: str, results: dict) -> None:
        txn = self._current.pop(cid, None)
        if txn is None:
            raise PreconditionViolation(f"{cid} finished without a running transaction")
        if set(results) != set(txn.reads):
            raise PreconditionViolation(
                f"{txn.id} must return exactly one value per read object, got {sorted(results)}")
        for obj, v in results.items():
            if not isinstance(v, ValueId) or v.object != obj:
                raise PreconditionViolation(f"{txn.id} returned {v!r} for {obj}")
        start = self._started.pop(cid)
        if self.now <= start:
            raise PreconditionViolation(f"{txn.id} ended in the tick it started")
        for obj in sorted(results):
            self.history.append(OpEvent(self.now, cid, txn.id, READ_RETURN, obj, results[obj]))
        for obj in sorted(txn.writes):
            self.history.append(OpEvent(self.now, cid, txn.id, WRITE_ACK, obj, txn.writes[obj]))
        self.history.append(OpEvent(self.now, cid, txn.id, TXN_END))
        if self._pending[cid]:
            self._push(self.now + self._think.get(cid, 1), _INVOKE, cid)

    def _step(self) -> None:
        at, cls, _, item = heapq.heappop(self._queue)
        self.now = at
        self.seq += 1
        if cls == _MSG:
            item.recv_seq = self.seq
            self.procs[item.dst].on_message(item, Ctx(self, item.dst))
        elif cls == _TIMER:
            self.procs[item].on_timer(Ctx(self, item))
        else:
            cid = item
            if cid in self._current or not self._pending[cid]:
                return
            txn = self._pending[cid].pop(0)
            for obj in txn.objects:
                if obj not in self.placement:
                    raise PreconditionViolation(f"{txn.id} touches unplaced object {obj}")
            self._current[cid] = txn
            self._started[cid] = self.now
            self.history.append(OpEvent(self.now, cid, txn.id, TXN_START))
            self.procs[cid].on_invoke(txn, Ctx(self, cid))

    # -- running -------------------------------------------------------------
    def run(self, until: int | None = None, max_events: int = 5_000_000) -> "Simulator":
        """Process events up to tick ``until`` (or until nothing is scheduled)."""
        n = 0
        while self._queue and (until is None or self._queue[0][0] <= until):
            self._step()
            n += 1
            if n > max_events:
                raise RuntimeError("event budget exhausted; protocol does not quiesce")
        if until is not None:
            self.now = max(self.now, until)
        return self

    def run_until(self, pred: Callable[["Simulator"], bool], limit: int = 1_000_000) -> bool:
        """Step until ``pred(self)`` holds; return whether it did."""
        for _ in range(limit):
            if pred(self):
                return True
            if not self._queue:
                return pred(self)
            self._step()
        return pred(self)

    def finish(self, horizon: int | None = None) -> "Simulator":
        self.run(horizon)
        if self.held:
            raise UnreleasedHold(f"held past horizon: {sorted(self.held)}")
        return self

    @property
    def idle(self) -> bool:
        return not self._queue

    def busy_clients(self) -> set[str]:
        return set(self._current)

    def snapshot(self) -> dict:
        return {s: canon(self.procs[s].snapshot()) for s in self.servers}

    def visible_at(self, value: ValueId) -> int | None:
        return self.visibility.get((self.placement[value.object], value))


def run(binding, n_servers: int, objects, workload: Iterable[ClientScript], sched: Schedule,
        horizon: int | None = None, *, allow_clock: bool = True) -> Simulator:
    """Run a workload to completion and return the finished simulator."""
    sim = Simulator(binding, n_servers, objects, sched, allow_clock=allow_clock)
    for script in workload:
        sim.submit(script)
    return sim.finish(horizon)


@dataclass
class StateDiff:
    servers: dict  # server -> {"window": (a, b) | None, "final": (a, b) | None}
    messages: list  # (only_in_a, only_in_b) message descriptors
    window: tuple

    @property
    def empty(self) -> bool:
        return not self.servers and not self.messages

    def __bool__(self):
        return not self.empty


def _message_view(log: MessageLog, exclude: str, since: int) -> list:
    out = []
    for m in log:
        if exclude in (m.src, m.dst) or m.sent_at < since:
            continue
        out.append(json.dumps([m.src, m.dst, m.sent_at, m.deliver_at, m.kind, m.txn,
                               canon(m.payload.values), canon(m.payload.data)], sort_keys=True))
    return sorted(out)


def paired_run(binding, n_servers: int, objects, workload: list, probe: ClientScript,
               sched: Schedule, horizon: int | None = None, *, prepare=None):
    """Run the world with and without ``probe`` and diff what the servers did.

    ``prepare(sim)`` may install scripted overrides on each world before it runs.
    Returns ``(sim_with, sim_without, diff)``.
    """
    if any(s.client == probe.client for s in workload):
        raise PreconditionViolation("probe client must be fresh")

    def build(with_probe: bool) -> Simulator:
        sim = Simulator(binding, n_servers, objects, sched)
        if prepare is not None:
            prepare(sim)
        for s in workload:
            sim.submit(s)
        if with_probe:
            sim.submit(probe)
        return sim

    a = build(True)
    probe_ids = {t.id for t in probe.txns}
    a.run_until(lambda s: sum(1 for ev in s.history.events
                              if ev.kind == TXN_END and ev.txn in probe_ids) == len(probe_ids))
    probe_ends = [ev.time for ev in a.history.events if ev.kind == TXN_END and ev.txn in probe_ids]
    if len(probe_ends) != len(probe_ids):
        raise PreconditionViolation("probe never completed")
    t_end = max(probe_ends)
    b = build(False)
    # finish the tick the probe ended in, in both worlds
    a.run(t_end)
    b.run(t_end)
    servers = {}
    snap_a, snap_b = a.snapshot(), b.snapshot()
    for s in a.servers:
        if snap_a[s] != snap_b[s]:
            servers.setdefault(s, {})["window"] = (snap_a[s], snap_b[s])
    a.finish(horizon)
    b.finish(horizon)
    snap_a, snap_b = a.snapshot(), b.snapshot()
    for s in a.servers:
        if snap_a[s] != snap_b[s]:
            servers.setdefault(s, {})["final"] = (snap_a[s], snap_b[s])
    t_start = probe.start
    va = _message_view(a.log, probe.client, t_start)
    vb = _message_view(b.log, probe.client, t_start)
    msgs = []
    if va != vb:
        sa, sb = set(va), set(vb)
        msgs = [sorted(sa - sb), sorted(sb - sa)]
    return a, b, StateDiff(servers, msgs, (t_start, t_end))
