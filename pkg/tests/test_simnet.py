import pytest

from causalsim.errors import ClockAccessDenied, PreconditionViolation, UnreleasedHold
from causalsim.history import Transaction, ValueId
from causalsim.protocols import get_protocol
from causalsim.protocols.api import Process, ProtocolBinding, Server
from causalsim.simnet import (ClientScript, Message, MessageLog, Override, Payload, Schedule,
                              Simulator, paired_run, run)


def W(tid, c, obj, seq):
    return Transaction(tid, c, writes={obj: ValueId(obj, c, seq)})


def R(tid, c, *objs):
    return Transaction(tid, c, reads=frozenset(objs))


def workload(n_clients=4, ops=25, objs=("X", "Y", "Z")):
    scripts = []
    for i in range(n_clients):
        c = f"c{i}"
        txns = []
        for j in range(ops):
            if (i + j) % 4 == 0:
                o = objs[(i + j) % len(objs)]
                txns.append(W(f"{c}.{j}", c, o, j + 1))
            else:
                txns.append(R(f"{c}.{j}", c, objs[j % len(objs)], objs[(j + 1) % len(objs)]))
        scripts.append(ClientScript(c, txns, start=1 + i))
    return scripts


def test_zero_workload():
    sim = run(get_protocol("d1"), 2, ["X"], [], Schedule(seed=1))
    assert len(sim.history) == 0 and len(sim.log) == 0


def test_single_write_fixed_delay():
    sim = run(get_protocol("naive-invisible"), 2, ["X"],
              [ClientScript("c0", [W("t", "c0", "X", 1)], start=5)], Schedule(1, 1, 1))
    ack = [e for e in sim.history if e.kind == "write-ack"]
    assert [e.time for e in ack] == [5 + 2]


@pytest.mark.parametrize("protocol", ["d1", "slow-2round", "naive-invisible", "d2"])
def test_same_seed_byte_identical(protocol):
    out = []
    for _ in range(2):
        sim = run(get_protocol(protocol), 3, ["X", "Y", "Z"], workload(), Schedule(seed=42))
        out.append((sim.history.dumps(), sim.log.dumps()))
    assert out[0] == out[1]
    assert len(out[0][0]) > 0


class _Burst(Process):
    """Sends five numbered messages to s0 at once and finishes on the fifth echo."""

    def on_invoke(self, txn, ctx):
        self.got = 0
        for i in range(5):
            ctx.send("s0", Payload("PING", txn.id, data={"i": i}))

    def on_message(self, msg, ctx):
        self.got += 1
        if self.got == 5:
            ctx.finish({"X": ValueId.initial("X")})


class _Echo(Server):
    def on_message(self, msg, ctx):
        ctx.send(msg.src, Payload("PONG", msg.payload.txn, data=msg.payload.data))


def test_fifo_not_guaranteed():
    b = ProtocolBinding("burst", _Burst, _Echo)
    inversions = 0
    for seed in range(100):
        sim = run(b, 2, ["X"], [ClientScript("c0", [R("t", "c0", "X")])], Schedule(seed=seed))
        sent = [m for m in sim.log if m.src == "c0"]
        inversions += any(b.deliver_at < a.deliver_at for a, b in zip(sent, sent[1:]))
    assert inversions >= 1


def test_every_message_delivered_once():
    sim = run(get_protocol("slow-2round"), 3, ["X", "Y", "Z"], workload(), Schedule(seed=3))
    assert all(m.recv_seq is not None for m in sim.log)
    assert len({m.id for m in sim.log}) == len(sim.log)
    assert all(m.deliver_at > m.sent_at for m in sim.log)


def test_channel_streams_independent():
    """A new client does not perturb delays drawn on other channels."""
    base = run(get_protocol("d1"), 2, ["X", "Y"], workload(2, 8, ("X", "Y")), Schedule(seed=9))
    more = run(get_protocol("d1"), 2, ["X", "Y"],
               workload(2, 8, ("X", "Y")) + [ClientScript("c9", [R("p", "c9", "X")], start=500)],
               Schedule(seed=9))
    a = [(m.src, m.dst, m.deliver_at - m.sent_at) for m in base.log]
    b = [(m.src, m.dst, m.deliver_at - m.sent_at) for m in more.log if "c9" not in (m.src, m.dst)]
    assert a == b[:len(a)]


def test_hold_and_release():
    sim = Simulator(get_protocol("naive-invisible"), 2, ["X"], Schedule(1, 1, 1))
    sim.hold({"src": "c0"}, "h")
    sim.invoke("c0", W("t", "c0", "X", 1), at=1)
    sim.run(50)
    assert [m.hold for m in sim.held_messages()] == ["h"]
    with pytest.raises(UnreleasedHold):
        sim.fork().finish(60)
    sim.release("h", at=60)
    sim.finish()
    assert [e.time for e in sim.history if e.kind == "txn-end"] == [61]


def test_override_deliver_at_and_once():
    sched = Schedule(1, 1, 1, [Override({"src": "c0", "dst": "s0"}, deliver_at=20, once=True)])
    sim = run(get_protocol("naive-invisible"), 2, ["X"],
              [ClientScript("c0", [W("a", "c0", "X", 1), W("b", "c0", "X", 2)])], sched)
    to_server = [m for m in sim.log if m.src == "c0"]
    assert to_server[0].deliver_at == 20 and to_server[1].deliver_at == to_server[1].sent_at + 1


def test_schedule_from_json():
    s = Schedule.from_json({"seed": 3, "delay_min": 2, "delay_max": 4,
                            "overrides": [{"match": {"kind": "ROT_REQ"}, "delay": 7}]})
    assert s.seed == 3 and s.overrides[0].delay == 7
    with pytest.raises(ValueError):
        Schedule(0, 3, 2)


def test_message_log_roundtrip():
    sim = run(get_protocol("d1"), 2, ["X", "Y"], workload(2, 6, ("X", "Y")), Schedule(seed=4))
    again = MessageLog.loads(sim.log.dumps())
    assert again.dumps() == sim.log.dumps()
    assert isinstance(again[0], Message)


class _Peeker(Process):
    def on_invoke(self, txn, ctx):
        ctx.now  # noqa: B018


def test_clock_access_denied():
    b = ProtocolBinding("peek", _Peeker, lambda s, st, pl: Server(s, st, pl))
    sim = Simulator(b, 2, ["X"], Schedule())
    sim.invoke("c0", R("t", "c0", "X"))
    with pytest.raises(ClockAccessDenied):
        sim.run()
    with pytest.raises(ClockAccessDenied):
        Simulator(get_protocol("d2"), 2, ["X"], Schedule(), allow_clock=False)


class _Lazy(Process):
    def on_invoke(self, txn, ctx):
        ctx.finish({})


def test_results_must_cover_reads():
    b = ProtocolBinding("lazy", _Lazy, lambda s, st, pl: Server(s, st, pl))
    sim = Simulator(b, 2, ["X"], Schedule())
    sim.invoke("c0", R("t", "c0", "X"))
    with pytest.raises(PreconditionViolation):
        sim.run()


def test_paired_run_noop_probe_is_empty():
    wl = workload(2, 6, ("X", "Y"))
    probe = ClientScript("p", [R("p1", "p", "X")], start=10_000)
    # probe sent after everything: servers behave identically up to and after it
    _, _, diff = paired_run(get_protocol("naive-invisible"), 2, ["X", "Y"], wl, probe, Schedule(seed=2))
    assert diff.empty


def test_paired_run_d1_probe_visible():
    wl = workload(2, 6, ("X", "Y"))
    probe = ClientScript("p", [R("p1", "p", "X", "Y")], start=20)
    _, _, diff = paired_run(get_protocol("d1"), 2, ["X", "Y"], wl, probe, Schedule(seed=2))
    assert not diff.empty


def test_paired_run_rejects_known_client():
    wl = workload(2, 3, ("X", "Y"))
    with pytest.raises(PreconditionViolation):
        paired_run(get_protocol("d1"), 2, ["X", "Y"], wl, ClientScript("c0", [R("z", "c0", "X")]),
                   Schedule())


def test_payload_values_are_tuple():
    p = Payload("K", "t", (ValueId("X", "c", 1),))
    assert hash(p) == hash(Payload("K", "t", (ValueId("X", "c", 1),)))
