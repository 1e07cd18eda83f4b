import json

import pytest

from causalsim.adversary import get_scenario, scenario_e12, scenario_eimp
from causalsim.checkers import audit_visibility
from causalsim.errors import ProtocolShapeMismatch


def test_e12_naive_is_fast_invisible_and_inconsistent():
    r = scenario_e12().run("naive-invisible")
    assert (r.fast, r.visible, r.consistent) == (True, False, False)
    assert r.details["rot"] == {"X": "X=ca.1", "Y": "Y=c.2"}
    assert r.witness["checker"]["client_transactions"] == ["ROT", "ROT1"]


def test_e12_d1_is_fast_visible_and_consistent():
    r = scenario_e12().run("d1")
    assert (r.fast, r.visible, r.consistent, r.progress) == (True, True, True, True)
    assert r.details["diff_servers"]


@pytest.mark.parametrize("protocol", ["naive-invisible", "d1", "d2"])
def test_e12_report_is_deterministic(protocol):
    texts = {scenario_e12(seed=0).run(protocol).dumps() for _ in range(3)}
    assert len(texts) == 1
    json.loads(texts.pop())


def test_e12_clock_protocol_is_reported_as_circumvention():
    r = scenario_e12().run("d2")
    assert r.classification.startswith("circumvention") and r.consistent


@pytest.mark.parametrize("protocol", ["naive-invisible", "d1", "d2"])
def test_e12_never_fast_invisible_and_consistent(protocol):
    # the trichotomy: a clockless protocol gives up one of the three
    r = scenario_e12().run(protocol)
    if "circumvention" in r.classification:
        return
    assert not (r.fast and r.visible is False and r.consistent and r.progress)


@pytest.mark.parametrize("protocol", ["fast-generic", "slow-2round"])
def test_e12_rejects_generic_shape(protocol):
    with pytest.raises(ProtocolShapeMismatch):
        scenario_e12().run(protocol)


def test_eimp_rejects_restricted_shape():
    with pytest.raises(ProtocolShapeMismatch):
        scenario_eimp(k=2).run("d1")


def test_eimp_slow_protocol_escapes_by_slowness():
    r = scenario_eimp(k=3).run("slow-2round")
    assert not r.fast and r.classification == "escapes by slowness"
    assert any(p["outcome"] == "blocked" for p in r.details["probes"])


def test_eimp_fast_generic_is_inconsistent():
    r = scenario_eimp(k=6).run("fast-generic")
    assert r.fast and not r.consistent and r.classification == "inconsistent"
    assert any(p["outcome"] == "mixed" for p in r.details["probes"])


def test_eimp_helping_never_makes_progress():
    msgs = []
    prev_steps = None
    for k in range(1, 7):
        r = scenario_eimp(k=k).run("fast-generic-helping")
        assert r.fast and r.consistent and r.progress is False
        assert all(p["outcome"] == "stale" for p in r.details["probes"])
        msgs.append(r.details["inter_server_messages"])
        steps = r.details["steps"]
        if prev_steps is not None:
            assert steps[:len(prev_steps)] == prev_steps
        prev_steps = steps
    assert all(a < b for a, b in zip(msgs, msgs[1:]))


def test_eimp_report_is_deterministic():
    a = scenario_eimp(k=4).run("fast-generic-helping").dumps()
    b = scenario_eimp(k=4).run("fast-generic-helping").dumps()
    assert a == b


def test_unknown_scenario():
    with pytest.raises(ValueError):
        get_scenario("nope")


def test_audit_visibility_on_e12_pair():
    from causalsim.simnet import StateDiff
    assert audit_visibility(StateDiff({}, [], (0, 0))).info["visible"] is False
