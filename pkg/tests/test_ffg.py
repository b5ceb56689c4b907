import random

import pytest
from hypothesis import given, settings, strategies as st

from ssf_lab.core import Block, BlockTree, GENESIS
from ssf_lab.ffg import (Ack, Checkpoint, DOUBLE_VOTE, FFGVote, GENESIS_CHECKPOINT, JustificationState,
                         NotFinalized, STALE_FFG_AFTER_ACK, SURROUND, all_offenses, apply_ffg_votes,
                         detect_slashable, finalize, min_reversion_stake, record_ack)

G = GENESIS_CHECKPOINT


def cp(name, slot):
    return Checkpoint(name.encode().ljust(32, b"\0"), slot)


def state(n=3, stake=32.0):
    return JustificationState({i: stake for i in range(n)})


def test_two_of_three_justifies():
    js = state()
    A = cp("A", 1)
    _, new = apply_ffg_votes(js, [FFGVote(0, G, A, 1), FFGVote(1, G, A, 1)])
    assert new == [A] and A in js.J


def test_one_of_three_does_not_justify():
    js = state()
    _, new = apply_ffg_votes(js, [FFGVote(0, G, cp("A", 1), 1)])
    assert new == [] and js.J == {G}


def test_unjustified_source_has_no_effect():
    js = state()
    A, B = cp("A", 1), cp("B", 2)
    apply_ffg_votes(js, [FFGVote(i, A, B, 2) for i in range(3)])
    assert js.J == {G}


def test_duplicates_counted_once_and_malformed_skipped():
    js = state()
    A = cp("A", 1)
    apply_ffg_votes(js, [FFGVote(0, G, A, 1), FFGVote(0, G, A, 1), FFGVote(1, A, G, 1)])
    assert A not in js.J and len(js.vote_log) == 1


def test_cascade_justification():
    js = state()
    A, B = cp("A", 1), cp("B", 2)
    apply_ffg_votes(js, [FFGVote(i, A, B, 2) for i in range(3)])
    _, new = apply_ffg_votes(js, [FFGVote(i, G, A, 1) for i in range(2)])
    assert new == [A, B]


def test_consecutive_finalization():
    js = state()
    A, B, C = cp("A", 1), cp("B", 2), cp("C", 3)
    apply_ffg_votes(js, [FFGVote(i, G, A, 1) for i in range(3)])
    apply_ffg_votes(js, [FFGVote(i, A, B, 2) for i in range(2)])
    assert A in finalize(js) and A in js.F
    js2 = state()
    apply_ffg_votes(js2, [FFGVote(i, G, A, 1) for i in range(3)])
    apply_ffg_votes(js2, [FFGVote(i, A, C, 3) for i in range(3)])
    assert A not in finalize(js2) and A not in js2.F


def test_ack_finalization():
    js = state()
    B = cp("B", 2)
    record_ack(js, Ack(0, B))
    assert finalize(js) == []
    record_ack(js, Ack(1, B))
    assert finalize(js) == [B] and B in js.ssf_finalized


def test_detect_examples():
    js = state()
    A, A2 = cp("A", 2), cp("A'", 2)
    v = FFGVote(0, G, A, 2)
    js.log_vote(v)
    assert detect_slashable(js, v) == []
    offs = detect_slashable(js, FFGVote(0, G, A2, 2))
    assert [o.kind for o in offs] == [DOUBLE_VOTE]
    js = state()
    js.log_vote(FFGVote(0, cp("x", 1), cp("y", 3), 3))
    assert [o.kind for o in detect_slashable(js, FFGVote(0, G, cp("z", 4), 4))] == [SURROUND]
    js = state()
    js.log_vote(FFGVote(0, G, cp("z", 4), 4))
    assert [o.kind for o in detect_slashable(js, FFGVote(0, cp("x", 1), cp("y", 3), 3))] == [SURROUND]


def test_stale_vote_after_ack():
    offs = all_offenses([FFGVote(0, G, cp("A", 5), 5), FFGVote(0, G, cp("B", 3), 6)], [Ack(0, cp("A", 5))])
    assert [o.kind for o in offs] == [STALE_FFG_AFTER_ACK]
    offs = all_offenses([FFGVote(0, G, cp("A", 5), 5), FFGVote(0, cp("A", 5), cp("B", 6), 6)],
                        [Ack(0, cp("A", 5))])
    assert offs == []


def test_min_reversion():
    js = state()
    A = cp("A", 1)
    with pytest.raises(NotFinalized):
        min_reversion_stake(js, A)
    assert min_reversion_stake(js, G) == 32.0
    js = state(100)
    assert min_reversion_stake(js, G) == pytest.approx(1066.67, abs=0.01)


def test_tree_checks_prefix():
    tree = BlockTree()
    a = Block.make(GENESIS.id, 1, 0)
    b = Block.make(GENESIS.id, 1, 1)
    tree.insert(a)
    tree.insert(b)
    js = JustificationState({i: 1.0 for i in range(3)}, tree)
    apply_ffg_votes(js, [FFGVote(i, G, Checkpoint(a.id, 1), 1) for i in range(3)])
    apply_ffg_votes(js, [FFGVote(i, Checkpoint(a.id, 1), Checkpoint(b.id, 2), 2) for i in range(3)])
    assert Checkpoint(b.id, 2) not in js.J


# --- accountable safety -------------------------------------------------------

def chain_votes(voters, hops, tag, start=G):
    """Votes by ``voters`` justifying ``hops`` then finalizing the last checkpoint."""
    votes, src = [], start
    for k, slot in enumerate(hops):
        tgt = cp(f"{tag}{k}", slot)
        votes += [FFGVote(v, src, tgt, slot) for v in voters]
        src = tgt
    fin_tgt = cp(f"{tag}f", src.slot + 1)
    votes += [FFGVote(v, src, fin_tgt, fin_tgt.slot) for v in voters]
    return votes, src


def quorum_split(rng, stakes):
    """Two sets each holding at least 2/3 of stake."""
    ids = list(stakes)
    total = sum(stakes.values())
    while True:
        q1 = {i for i in ids if rng.random() < 0.8}
        q2 = {i for i in ids if rng.random() < 0.8}
        w = lambda s: sum(stakes[i] for i in s)
        if 3 * w(q1) >= 2 * total and 3 * w(q2) >= 2 * total:
            return q1, q2


def hops_from(rng, max_slot):
    k = rng.randint(1, 4)
    return sorted(rng.sample(range(1, max_slot), k))


@settings(max_examples=200, deadline=None)
@given(st.integers(0, 10**9))
def test_double_finalization_attributes_a_third(seed):
    rng = random.Random(seed)
    n = rng.randint(3, 12)
    stakes = {i: float(rng.choice([1, 2, 32])) for i in range(n)}
    q1, q2 = quorum_split(rng, stakes)
    v1, f1 = chain_votes(sorted(q1), hops_from(rng, 12), "L")
    v2, f2 = chain_votes(sorted(q2), hops_from(rng, 12), "R")
    stream = v1 + v2
    rng.shuffle(stream)
    js = JustificationState(stakes)
    offenders = set()
    for v in stream:
        offenders |= {o.offender for o in detect_slashable(js, v)}
        apply_ffg_votes(js, [v])
    finalize(js)
    assert f1 in js.F and f2 in js.F and f1 != f2
    assert 3 * sum(stakes[i] for i in offenders) >= sum(stakes.values())


def test_injected_offense_recall_and_precision():
    rng = random.Random(5)
    for _ in range(300):
        n = 6
        honest = []
        for v in range(n):
            src = G
            for slot in range(1, 8):
                tgt = cp(f"h{slot}", slot)
                honest.append(FFGVote(v, src, tgt, slot))
                src = tgt
        assert all_offenses(honest) == []
        bad = rng.randrange(n)
        kind = rng.choice([DOUBLE_VOTE, SURROUND])
        if kind == DOUBLE_VOTE:
            s = rng.randint(1, 7)
            inj = FFGVote(bad, G, cp(f"x{s}", s), s)
        else:
            inj = FFGVote(bad, G, cp("wide", 9), 9)
            honest = [v for v in honest if not (v.sender == bad and v.target.slot in (8, 9))]
            honest.append(FFGVote(bad, cp("h2", 2), cp("h4", 4), 4))
        pos = rng.randrange(len(honest) + 1)
        stream = honest[:pos] + [inj] + honest[pos:]
        offs = all_offenses(stream)
        assert offs and {o.offender for o in offs} == {bad}
        assert kind in {o.kind for o in offs}


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10**9))
def test_monotone_and_replay(seed):
    rng = random.Random(seed)
    stakes = {i: 1.0 for i in range(5)}
    names = [cp(f"c{i}", i) for i in range(1, 7)]
    pool = [G] + names
    votes = []
    for _ in range(60):
        a, b = sorted(rng.sample(range(len(pool)), 2))
        votes.append(FFGVote(rng.randrange(5), pool[a], pool[b], pool[b].slot))
    js = JustificationState(stakes)
    J, F = set(js.J), set(js.F)
    for v in votes:
        apply_ffg_votes(js, [v])
        finalize(js)
        assert J <= js.J and F <= js.F and js.F <= js.J
        J, F = set(js.J), set(js.F)
    js2 = JustificationState(stakes)
    apply_ffg_votes(js2, list(js.vote_log))
    finalize(js2)
    assert js2.J == js.J and js2.F == js.F
