"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are printed even
without ``-s``.
"""
import random
import time

import pytest

from causalsim.adversary import scenario_e12, scenario_eimp
from causalsim.checkers import (check_causal_serialization, oracle_causal_serialization,
                                replay_witness)
from causalsim.fixtures import sole_wot_history
from causalsim.harness import WorkloadSpec, adversarial_spec, run_workload, visibility_probe
from causalsim.protocols import get_protocol

from conftest import random_history


@pytest.fixture
def report(capsys):
    def emit(criterion: str, ok: bool, detail: str):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] {criterion}: {detail}")
        assert ok, detail
    return emit


def test_ac1_checker_matches_oracle(report):
    rng = random.Random(2024)
    t0 = time.perf_counter()
    disagree, bad = 0, 0
    for _ in range(500):
        h = random_history(rng, max_txns=6)
        fast = check_causal_serialization(h).passed
        bad += not fast
        disagree += fast != oracle_causal_serialization(h)
    dt = time.perf_counter() - t0
    report("AC1 checker vs exhaustive oracle", disagree == 0 and dt < 60 and 0 < bad < 500,
           f"500 histories ({bad} violating), {disagree} disagreements, {dt:.1f}s")


def test_ac2_sole_wot_fixture(report):
    h = sole_wot_history()
    v = check_causal_serialization(h)
    replay = replay_witness(h, v.witness) if not v.passed else None
    ok = (not v.passed and replay is not None and not replay.passed
          and v.witness["client_transactions"] == ["ROT", "ROT2"])
    report("AC2 mixed-pair-then-fresh fixture rejected", ok,
           f"witness {v.witness and v.witness['client_transactions']}, replay fails: "
           f"{replay is not None and not replay.passed}")


def test_ac3_two_read_scenario(report):
    naive = [scenario_e12().run("naive-invisible") for _ in range(3)]
    d1 = [scenario_e12().run("d1") for _ in range(3)]
    n, d = naive[0], d1[0]
    ok = ((n.fast, n.visible, n.consistent) == (True, False, False)
          and n.witness["rot"] == {"X": "X=ca.1", "Y": "Y=c.2"}
          and n.witness["rot1"] == {"X": "X=c.1", "Y": "Y=c.2"}
          and (d.fast, d.visible, d.consistent) == (True, True, True)
          and len({r.dumps() for r in naive}) == 1 and len({r.dumps() for r in d1}) == 1)
    report("AC3 naive fast/invisible/inconsistent, d1 fast/visible/consistent", ok,
           f"naive={n.classification} rot={n.witness and n.witness['rot']}; d1={d.classification}; "
           "3 runs identical")


def test_ac4_growing_help_scenario(report):
    counts, every_probe = [], True
    for k in range(1, 7):
        r = scenario_eimp(k=k).run("fast-generic-helping")
        counts.append(r.details["inter_server_messages"])
        for p in r.details["probes"]:
            failed = p["outcome"] == "mixed" and not p["confirm"]["consistent"]
            every_probe &= p["outcome"] == "stale" or failed
    increasing = all(a < b for a, b in zip(counts, counts[1:]))
    plain = scenario_eimp(k=6).run("fast-generic")
    slow = scenario_eimp(k=6).run("slow-2round")
    ok = every_probe and increasing and slow.classification == "escapes by slowness" \
        and not plain.consistent
    report("AC4 fast generic candidate stale-or-failing at every probe", ok,
           f"inter-server messages k=1..6: {counts}; fast-generic: {plain.classification}; "
           f"slow-2round: {slow.classification} (truncated at k=6)")


def test_ac5_protocol_correctness(report):
    ratios = [0.05, 0.01, 0.001]
    t0 = time.perf_counter()
    failures = {}
    for name in ("d1", "d2-bounded", "slow-2round"):
        u = get_protocol(name).options.get("u")
        bad = []
        for seed in range(1000):
            spec = WorkloadSpec(seed=seed, servers=3, clients=4, ops_per_client=50,
                                write_ratio=ratios[seed % 3])
            assert u is None or spec.delay_max <= u
            if not run_workload(spec, name).metrics.passed:
                bad.append(seed)
        failures[name] = bad
    dt = time.perf_counter() - t0
    ok = not any(failures.values()) and dt < 600
    report("AC5 d1, d2-bounded, slow-2round over 1000 seeds each", ok,
           f"failing seeds {failures}, {dt:.0f}s")


def test_ac6_fastness(report):
    total, fast = {}, {}
    for name in ("d1", "d2"):
        for seed in range(100):
            for spec in (WorkloadSpec(seed=seed), adversarial_spec(seed)):
                res = run_workload(spec, name)
                total[name] = total.get(name, 0) + res.metrics.rots
                fast[name] = fast.get(name, 0) + res.metrics.fast_rots
    slow_failing = 0
    for seed in range(100):
        res = run_workload(adversarial_spec(seed), "slow-2round")
        slow_failing += res.metrics.rots - res.metrics.fast_rots
    ok = all(fast[n] == total[n] for n in total) and slow_failing >= 1
    report("AC6 fastness audit", ok,
           f"d1 {fast['d1']}/{total['d1']}, d2 {fast['d2']}/{total['d2']} fast; "
           f"slow-2round non-fast ROTs over 100 adversarial seeds: {slow_failing}")


def test_ac7_visibility(report):
    d1 = sum(not visibility_probe(WorkloadSpec(seed=s), "d1").empty for s in range(100))
    naive = sum(visibility_probe(WorkloadSpec(seed=s), "naive-invisible").empty
                for s in range(100))
    report("AC7 paired-run visibility", d1 == 100 and naive == 100,
           f"d1 non-empty {d1}/100, naive-invisible empty {naive}/100")


def test_ac8_tradeoff(report):
    seeds = range(30)
    ss, writes, rounds, rots = {}, {}, {}, {}
    for name in ("d1", "slow-2round"):
        for seed in seeds:
            m = run_workload(WorkloadSpec(seed=seed, write_ratio=0.05), name).metrics
            ss[name] = ss.get(name, 0) + m.server_server_messages
            writes[name] = writes.get(name, 0) + m.writes
            rounds[name] = rounds.get(name, 0) + sum(int(r) * c for r, c in m.rounds_histogram.items())
            rots[name] = rots.get(name, 0) + m.rots
    per_write = {n: ss[n] / writes[n] for n in ss}
    d1_rounds = rounds["d1"] / rots["d1"]
    # schedules that trigger round 2: the adversarial ones
    adv = [run_workload(adversarial_spec(s, write_ratio=0.05), "slow-2round").metrics
           for s in seeds]
    slow_rounds = sum(m.mean_rounds * m.rots for m in adv) / sum(m.rots for m in adv)
    ok = per_write["d1"] > per_write["slow-2round"] and d1_rounds == 1.0 and slow_rounds > 1.0
    report("AC8 trade-off", ok,
           f"ss/write d1 {per_write['d1']:.2f} vs slow-2round {per_write['slow-2round']:.2f}; "
           f"mean rounds d1 {d1_rounds:.2f}, slow-2round {slow_rounds:.3f} on round-2 schedules")


def test_ac9_determinism(report):
    diffs = []
    names = ["d1", "slow-2round", "d2", "d2-bounded", "naive-invisible"]
    for name in names:
        for spec in (WorkloadSpec(seed=5), adversarial_spec(9)):
            a, b = run_workload(spec, name), run_workload(spec, name)
            if a.history.dumps() != b.history.dumps() or a.log.dumps() != b.log.dumps():
                diffs.append((name, spec.seed))
    for name in ("fast-generic", "slow-2round"):
        spec = adversarial_spec(3, generic=True)
        a, b = run_workload(spec, name), run_workload(spec, name)
        if a.history.dumps() != b.history.dumps() or a.log.dumps() != b.log.dumps():
            diffs.append((name, "generic"))
    report("AC9 byte-identical History and MessageLog", not diffs,
           f"{len(names) * 2 + 2} (spec, protocol, seed) triples, differing: {diffs}")
