import pytest

from ssf_lab.netsim import (AdversaryKind, AdversaryPolicy, ConfigError, NetworkConfig, Simulation,
                            SleepSchedule, Trace, evaluate, keyed_rng, schedule_delivery)
from ssf_lab.tob import HeadVote, Variant

import trace_checks as tc

VOTE = HeadVote(0, 1, b"\0" * 32)


def sim(variant, n=4, slots=5, adversary=AdversaryPolicy(), sleep=None, **net):
    return Simulation(variant, NetworkConfig(n, **net), slots, adversary, sleep).run()


def test_schedule_delivery_examples():
    assert schedule_delivery(VOTE, 5, 1, NetworkConfig(4)) == 6
    assert schedule_delivery(VOTE, 5, 1, NetworkConfig(4, gst=100)) <= 101
    sleep = SleepSchedule({1: [(0, 20)]})
    assert schedule_delivery(VOTE, 5, 1, NetworkConfig(4), sleep=sleep) == 20
    assert schedule_delivery(VOTE, 5, 2, NetworkConfig(4), sleep=sleep) == 6
    assert schedule_delivery(VOTE, 5, 1, NetworkConfig(4), sleep=SleepSchedule({1: [(0, None)]})) is None


def test_split_view_delivers_within_group():
    pol = AdversaryPolicy(AdversaryKind.SPLIT_VIEW)
    cfg = NetworkConfig(4, gst=50)
    assert schedule_delivery(VOTE, 5, 1, cfg, pol, sender=0) == 6
    assert schedule_delivery(VOTE, 5, 3, cfg, pol, sender=0) == 51


@pytest.mark.parametrize("field,kw", [("n", {"n": 0}), ("delta", {"n": 4, "delta": 0}),
                                      ("gst", {"n": 4, "gst": -1}), ("eta", {"n": 4, "eta": 0})])
def test_config_errors(field, kw):
    with pytest.raises(ConfigError) as e:
        NetworkConfig(**kw)
    assert e.value.field == field


def test_sleep_schedule_validation():
    with pytest.raises(ConfigError):
        SleepSchedule({0: [(5, 10), (8, 12)]})


def test_honest_ssf_five_slots():
    tr = sim(Variant.SSF)
    cps = {tuple(e["checkpoint"]) for e in tr.of_kind("justify")}
    assert len(cps) == 5
    for cp in cps:
        assert {e["v"] for e in tr.of_kind("justify") if tuple(e["checkpoint"]) == cp} == {0, 1, 2, 3}
    m = evaluate(tr)
    assert m.latencies["justify"] == [0] * 5
    assert m.latencies["ssf_finalize"] == [0] * 5
    assert m.safety_violations == 0 and m.counts["reorgs"] == 0


def test_determinism_byte_identical():
    a = sim(Variant.STREAMLINED, 5, 8, AdversaryPolicy.with_fraction("equivocate", 0.4, 5), seed=3)
    b = sim(Variant.STREAMLINED, 5, 8, AdversaryPolicy.with_fraction("equivocate", 0.4, 5), seed=3)
    assert a.to_jsonl() == b.to_jsonl()
    assert evaluate(a).blocks_csv() == evaluate(b).blocks_csv()


def test_keyed_rng_streams_independent():
    a = keyed_rng(1, "leader", 0, 5).integers(1 << 30, size=4)
    b = keyed_rng(1, "leader", 0, 5).integers(1 << 30, size=4)
    c = keyed_rng(1, "leader", 0, 6).integers(1 << 30, size=4)
    assert (a == b).all() and not (a == c).all()


def test_trace_roundtrip(tmp_path):
    tr = sim(Variant.FASTCONFIRM, slots=2)
    p = tmp_path / "t.jsonl"
    tr.write(p)
    assert Trace.read(p).to_jsonl() == tr.to_jsonl()


@pytest.mark.parametrize("variant", list(Variant))
@pytest.mark.parametrize("adv", ["none", "equivocate", "withhold_reveal", "crash_leader"])
def test_delivery_bound_and_no_honest_offense(variant, adv):
    pol = AdversaryPolicy.with_fraction(adv, 0.25, 8) if adv != "none" else AdversaryPolicy()
    tr = sim(variant, 8, 12, pol)
    assert tc.delivery_violations(tr) == []
    assert tc.honest_offenses(tr) == []
    assert evaluate(tr).safety_violations == 0


def test_delivery_bound_async_and_sleepy():
    tr = sim(Variant.PROB_3D, 6, 12, gst=20)
    assert tc.delivery_violations(tr) == []
    sleep = SleepSchedule({1: [(3, 17)], 4: [(10, 30)]})
    tr = sim(Variant.BASELINE_4D, 6, 10, sleep=sleep)
    assert tc.delivery_violations(tr, sleep) == []


def test_equivocate_double_inputs_each_instance():
    tr = sim(Variant.BASELINE_4D, 4, 6, AdversaryPolicy.with_fraction("equivocate", 0.25, 4))
    per = {}
    for e in tr.of_kind("ga-input"):
        if e["v"] == 3:
            per.setdefault(e["instance"], set()).add(e["log"])
    assert per and all(len(logs) == 2 for logs in per.values())
    for e in tr.of_kind("ga-input"):
        assert e["v"] == 3 or "to" not in e


def test_crash_leader_chain_grows():
    n, slots = 8, 16
    pol = AdversaryPolicy.with_fraction("crash_leader", 0.25, n)
    crash = sim(Variant.FASTCONFIRM, n, slots, pol)
    honest = sim(Variant.FASTCONFIRM, n, slots)
    crashed = {e["slot"] for e in honest.of_kind("propose")} - {e["slot"] for e in crash.of_kind("propose")}
    assert crashed and all(e["v"] in pol.validators for e in honest.of_kind("propose") if e["slot"] in crashed)
    m = evaluate(crash)
    assert m.counts["reorgs"] == 0
    assert m.counts["blocks"] == slots - len(crashed)
    # every honest proposal is confirmed, as in the honest run
    assert all(r["slot_confirmed"] is not None for r in m.blocks)


def test_withhold_reveal_no_conflicting_justification():
    for seed in range(3):
        pol = AdversaryPolicy.with_fraction("withhold_reveal", 0.25, 8)
        tr = sim(Variant.SSF, 8, 20, pol, seed=seed)
        assert tc.justified_conflicts(tr) == []
        assert evaluate(tr).safety_violations == 0


def test_streamlined_latency_two_slots():
    m = evaluate(sim(Variant.STREAMLINED, 4, 10))
    assert set(m.latencies["justify"]) == {2}
    assert len(m.latencies["justify"]) == 8


def test_partition_freezes_finality():
    n, slots = 8, 12
    pol = AdversaryPolicy(AdversaryKind.SPLIT_VIEW)
    tr = sim(Variant.SSF, n, slots, pol, gst=slots * 4)
    assert tr.of_kind("justify") == [] and tr.of_kind("finalize") == []
    assert len(tr.of_kind("propose")) == slots


def test_group_of_default_halves():
    assert AdversaryPolicy(AdversaryKind.SPLIT_VIEW).group_of(6) == [0, 0, 0, 1, 1, 1]


def test_with_fraction_highest_ids():
    assert AdversaryPolicy.with_fraction("equivocate", 0.4, 10).validators == frozenset({6, 7, 8, 9})
