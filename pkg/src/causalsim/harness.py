"""Random closed-loop workloads, metrics, and multi-protocol comparison."""
from __future__ import annotations

import json
import random
import statistics
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path

from .checkers import LogIndex, Verdict, audit_fastness, check_progress, check_sampled, rot_rounds
from .errors import BudgetExceeded, ProtocolShapeMismatch
from .history import History, Transaction, ValueId, causal_precedes
from .protocols import ProtocolBinding, get_protocol
from .simnet import (ClientScript, MessageLog, Override, Schedule, Simulator, canon, is_server,
                     paired_run)

PROBE_CLIENT = "probe"


@dataclass
class WorkloadSpec:
    clients: int = 4
    servers: int = 3
    objects: int = 6
    ops_per_client: int = 50
    write_ratio: float = 0.05
    rot_size: int = 2
    seed: int = 0
    wot_size: int = 1
    delay_min: int = 1
    delay_max: int = 10
    think: int = 1
    samples: int = 8
    horizon: int | None = None
    # fraction of client->server channels pinned to delay_max (the rest to delay_min)
    slow_channels: float = 0.0

    def __post_init__(self):
        if not 0 < self.write_ratio < 1:
            raise ValueError("write_ratio must lie strictly between 0 and 1")
        if not 1 <= self.rot_size <= self.objects:
            raise ValueError("rot_size must be between 1 and the number of objects")
        if not 1 <= self.wot_size <= self.objects:
            raise ValueError("wot_size must be between 1 and the number of objects")
        if not 0 <= self.slow_channels <= 1:
            raise ValueError("slow_channels is a fraction")
        if self.clients < 1 or self.ops_per_client < 0 or self.servers < 2:
            raise ValueError("need at least one client and two servers")

    def to_json(self) -> dict:
        return asdict(self)

    @classmethod
    def from_json(cls, d: dict) -> "WorkloadSpec":
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown workload fields: {sorted(extra)}")
        return cls(**d)

    def object_names(self) -> list[str]:
        return [f"k{i}" for i in range(self.objects)]


def adversarial_spec(seed: int, generic: bool = False, **kw) -> WorkloadSpec:
    """Write-heavy, few objects, skewed channels: schedules where reads race writes."""
    base = dict(seed=seed, ops_per_client=30, write_ratio=0.3, objects=3, rot_size=3,
                delay_max=20, samples=32, slow_channels=1 / 3, wot_size=2 if generic else 1)
    base.update(kw)
    return WorkloadSpec(**base)


def schedule_for(spec: WorkloadSpec) -> Schedule:
    sched = Schedule(spec.seed, spec.delay_min, spec.delay_max)
    if spec.slow_channels:
        rng = random.Random(f"skew/{spec.seed}")
        for c in range(spec.clients):
            for s in range(spec.servers):
                slow = rng.random() < spec.slow_channels
                sched.overrides.append(Override({"src": f"c{c}", "dst": f"s{s}"},
                                                delay=spec.delay_max if slow else spec.delay_min))
    return sched


def generate(spec: WorkloadSpec, binding: ProtocolBinding) -> list[ClientScript]:
    """One closed-loop script per client. Writes are write-only, reads read-only."""
    if spec.wot_size > 1 and not binding.generic_txns:
        raise ProtocolShapeMismatch(f"{binding.name} only supports single-object writes")
    rng = random.Random(f"workload/{spec.seed}")
    objs = spec.object_names()
    scripts = []
    for ci in range(spec.clients):
        c = f"c{ci}"
        txns, seq = [], 0
        for i in range(spec.ops_per_client):
            tid = f"{c}.{i}"
            if rng.random() < spec.write_ratio:
                writes = {}
                for o in sorted(rng.sample(objs, spec.wot_size)):
                    seq += 1
                    writes[o] = ValueId(o, c, seq)
                txns.append(Transaction(tid, c, writes=writes))
            else:
                txns.append(Transaction(tid, c, reads=frozenset(rng.sample(objs, spec.rot_size))))
        scripts.append(ClientScript(c, txns, start=1 + rng.randrange(spec.clients), think=spec.think))
    return scripts


@dataclass
class Metrics:
    protocol: str
    seed: int
    transactions: int
    writes: int
    rots: int
    rounds_histogram: dict
    client_server_messages: int
    server_server_messages: int
    messages_total: int
    visibility_lag: list
    never_visible: int
    verdicts: dict
    fast_rots: int
    quiescence: int
    end_tick: int
    notes: list = field(default_factory=list)

    @property
    def mean_rounds(self) -> float:
        n = sum(self.rounds_histogram.values())
        return sum(int(r) * c for r, c in self.rounds_histogram.items()) / n if n else 0.0

    @property
    def messages_per_op(self) -> float:
        return self.messages_total / self.transactions if self.transactions else 0.0

    @property
    def s2s_per_write(self) -> float:
        return self.server_server_messages / self.writes if self.writes else 0.0

    @property
    def passed(self) -> bool:
        return all(v["pass"] for v in self.verdicts.values())

    def row(self) -> dict:
        lag = self.visibility_lag
        return {
            "protocol": self.protocol, "seed": self.seed, "transactions": self.transactions,
            "writes": self.writes, "rots": self.rots, "mean_rot_rounds": round(self.mean_rounds, 4),
            "max_rot_rounds": max((int(r) for r in self.rounds_histogram), default=0),
            "cs_messages": self.client_server_messages, "ss_messages": self.server_server_messages,
            "messages_per_op": round(self.messages_per_op, 4),
            "ss_per_write": round(self.s2s_per_write, 4),
            "mean_visibility_lag": round(statistics.mean(lag), 4) if lag else "",
            "fast_rot_fraction": round(self.fast_rots / self.rots, 4) if self.rots else "",
            "causal": self.verdicts["causal"]["pass"], "progress": self.verdicts["progress"]["pass"],
        }

    def to_json(self) -> dict:
        d = asdict(self)
        d["rounds_histogram"] = {str(k): v for k, v in sorted(self.rounds_histogram.items())}
        d["summary"] = self.row()
        return canon(d)


@dataclass
class RunResult:
    spec: WorkloadSpec
    metrics: Metrics
    history: History
    log: MessageLog
    witnesses: dict

    def write(self, out_dir) -> Path:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.history.dump(out / "history.jsonl")
        self.log.dump(out / "messages.jsonl")
        (out / "spec.json").write_text(json.dumps(self.spec.to_json(), sort_keys=True, indent=2) + "\n")
        body = {"metrics": self.metrics.to_json(), "witnesses": canon(self.witnesses)}
        (out / "metrics.json").write_text(json.dumps(body, sort_keys=True, indent=2) + "\n")
        return out


def _visibility_lag(sim: Simulator, h: History) -> tuple[list, int]:
    ack_sent: dict[tuple, int] = {}
    for m in sim.log:
        if is_server(m.src) and not is_server(m.dst) and m.txn is not None:
            key = (m.src, m.txn)
            ack_sent[key] = max(ack_sent.get(key, 0), m.sent_at)
    lags, never = [], 0
    for t in h.transactions():
        for obj, v in t.writes.items():
            server = sim.placement[obj]
            vis = sim.visibility.get((server, v))
            if vis is None:
                never += 1
                continue
            lags.append(vis - ack_sent.get((server, t.id), vis))
    return lags, never


def run_workload(spec: WorkloadSpec, protocol, out_dir=None) -> RunResult:
    binding = get_protocol(protocol) if isinstance(protocol, str) else protocol
    scripts = generate(spec, binding)
    objs = spec.object_names()
    notes = []
    u = binding.options.get("u")
    if u is not None and spec.delay_max > u:
        notes.append(f"delay_max {spec.delay_max} exceeds the protocol's bound {u}")
    sim = Simulator(binding, spec.servers, objs, schedule_for(spec))
    for s in scripts:
        sim.submit(s)
    sim.run(spec.horizon)
    quiescence = sim.now + binding.settle_ticks
    sim.invoke(PROBE_CLIENT, Transaction("probe.0", PROBE_CLIENT, reads=frozenset(objs)),
               at=quiescence + 1)
    sim.finish(spec.horizon)
    h, log = sim.history, sim.log
    witnesses = {}

    verdicts = {}
    try:
        graph = causal_precedes(h)
        causal = check_sampled(h, random.Random(f"sample/{spec.seed}"), spec.samples, graph)
    except BudgetExceeded as e:
        notes.append(f"causal check skipped: {e}")
        causal = Verdict("causal", True, info={"skipped": str(e)})
    verdicts["causal"] = causal
    verdicts["progress"] = check_progress(h, log, quiescence)
    for name, v in verdicts.items():
        if not v.passed:
            witnesses[name] = v.witness

    rots = [t for t in h.transactions() if t.read_only and t.client != PROBE_CLIENT]
    index = LogIndex(log)
    hist = Counter(rot_rounds(log, t.client, t.id, index) for t in rots)
    fast = sum(audit_fastness(h, log, t.id, index).passed for t in rots)
    cs = sum(1 for m in log if is_server(m.src) != is_server(m.dst))
    ss = sum(1 for m in log if is_server(m.src) and is_server(m.dst))
    lags, never = _visibility_lag(sim, h)
    txns = [t for t in h.transactions() if t.client != PROBE_CLIENT]
    metrics = Metrics(
        protocol=binding.name, seed=spec.seed, transactions=len(txns),
        writes=sum(1 for t in txns if t.has_write), rots=len(rots),
        rounds_histogram=dict(sorted(hist.items())), client_server_messages=cs,
        server_server_messages=ss, messages_total=len(log), visibility_lag=lags,
        never_visible=never, verdicts={k: {"pass": v.passed} for k, v in verdicts.items()},
        fast_rots=fast, quiescence=quiescence, end_tick=sim.now, notes=notes)
    result = RunResult(spec, metrics, h, log, witnesses)
    if out_dir is not None:
        result.write(out_dir)
    return result


def visibility_probe(spec: WorkloadSpec, protocol):
    """Paired run of a workload with and without one extra read of every object.

    The probe starts at a seeded tick inside the busy part of the run. Returns
    the StateDiff between the two worlds.
    """
    binding = get_protocol(protocol) if isinstance(protocol, str) else protocol
    scripts = generate(spec, binding)
    at = 2 + random.Random(f"probe/{spec.seed}").randrange(spec.ops_per_client * 2 + 1)
    probe = ClientScript(PROBE_CLIENT, [Transaction("probe.0", PROBE_CLIENT,
                                                    reads=frozenset(spec.object_names()))], start=at)
    _, _, diff = paired_run(binding, spec.servers, spec.object_names(), scripts, probe,
                            schedule_for(spec), spec.horizon)
    return diff


COMPARE_COLUMNS = ["protocol", "seed", "transactions", "writes", "rots", "mean_rot_rounds",
                   "max_rot_rounds", "cs_messages", "ss_messages", "messages_per_op",
                   "ss_per_write", "mean_visibility_lag", "fast_rot_fraction", "causal", "progress"]


def compare(protocols: list[str], spec: WorkloadSpec, seeds=None) -> list[dict]:
    """One row per (protocol, seed) on identical workloads and schedules."""
    rows = []
    for seed in (seeds if seeds is not None else [spec.seed]):
        s = WorkloadSpec.from_json({**spec.to_json(), "seed": seed})
        for p in protocols:
            rows.append(run_workload(s, p).metrics.row())
    return rows


def summarize(rows: list[dict]) -> list[dict]:
    """Aggregate compare rows per protocol."""
    out = []
    for p in dict.fromkeys(r["protocol"] for r in rows):
        mine = [r for r in rows if r["protocol"] == p]
        writes = sum(r["writes"] for r in mine)
        rots = sum(r["rots"] for r in mine)
        out.append({
            "protocol": p, "runs": len(mine),
            "mean_rot_rounds": round(sum(r["mean_rot_rounds"] * r["rots"] for r in mine) / rots, 4)
            if rots else 0.0,
            "ss_per_write": round(sum(r["ss_messages"] for r in mine) / writes, 4) if writes else 0.0,
            "messages_per_op": round(sum(r["cs_messages"] + r["ss_messages"] for r in mine)
                                     / max(1, sum(r["transactions"] for r in mine)), 4),
            "causal_pass": sum(bool(r["causal"]) for r in mine),
            "progress_pass": sum(bool(r["progress"]) for r in mine),
        })
    return out
