import random

import pytest
from hypothesis import given, settings, strategies as st

from ssf_lab.core import (Block, BlockTree, ConflictingContent, GENESIS, InvalidBlock,
                          UnknownBlock, block_id, highest, insert_block, is_prefix)


def chain_tree():
    t = BlockTree()
    a = Block.make(GENESIS.id, 1, 0, b"A")
    b = Block.make(a.id, 2, 0, b"B")
    a2 = Block.make(GENESIS.id, 1, 1, b"A'")
    for blk in (a, b, a2):
        t.insert(blk)
    return t, a, b, a2


def test_insert_genesis_child():
    t = BlockTree()
    a = Block.make(GENESIS.id, 1, 0)
    insert_block(t, a)
    assert t.chain(a.id) == [GENESIS.id, a.id]


def test_orphan_buffered_then_attached():
    t = BlockTree()
    a = Block.make(GENESIS.id, 1, 0)
    b = Block.make(a.id, 2, 0)
    assert t.insert(b) == []
    assert b.id not in t and t.pending == 1
    attached = t.insert(a)
    assert [x.id for x in attached] == [a.id, b.id]
    assert t.pending == 0 and t.is_prefix(a.id, b.id)


def test_idempotent_insert():
    t = BlockTree()
    a = Block.make(GENESIS.id, 1, 0)
    t.insert(a)
    before = (dict(t.blocks), {k: list(v) for k, v in t.children.items()})
    assert t.insert(a) == []
    assert (t.blocks, t.children) == before


def test_conflicting_content():
    t = BlockTree()
    a = Block.make(GENESIS.id, 1, 0)
    t.insert(a)
    forged = Block(GENESIS.id, 1, 5, b"x", a.id)
    with pytest.raises(ConflictingContent):
        t.insert(forged)


def test_slot_must_increase():
    t = BlockTree()
    a = Block.make(GENESIS.id, 2, 0)
    t.insert(a)
    with pytest.raises(InvalidBlock):
        t.insert(Block.make(a.id, 2, 1))


def test_id_is_content_hash():
    a = Block.make(GENESIS.id, 1, 0, b"p")
    assert a.id == block_id(GENESIS.id, 1, 0, b"p")
    assert a.id != Block.make(GENESIS.id, 1, 0, b"q").id
    assert Block.from_json(a.to_json()) == a


def test_is_prefix_examples():
    t, a, b, a2 = chain_tree()
    assert all(is_prefix(t, GENESIS.id, x) for x in t.blocks)
    assert is_prefix(t, a.id, b.id)
    assert not is_prefix(t, b.id, a.id)
    assert not is_prefix(t, a.id, a2.id) and not is_prefix(t, a2.id, a.id)
    with pytest.raises(UnknownBlock):
        is_prefix(t, b"\x00" * 32, a.id)


def test_highest_examples():
    t = BlockTree()
    a = Block.make(GENESIS.id, 1, 0)
    b = Block.make(a.id, 2, 0)
    t.insert(a)
    t.insert(b)
    assert highest({a.id, b.id}, t) == b.id
    c1 = Block.make(a.id, 2, 1)
    c2 = Block.make(a.id, 2, 2)
    t.insert(c1)
    t.insert(c2)
    assert highest({b.id, c1.id, c2.id}, t) == min(b.id, c1.id, c2.id)
    assert highest(set(), t) is None


def random_blocks(seed, size):
    rng = random.Random(seed)
    blocks = []
    pool = [GENESIS]
    for i in range(size):
        parent = rng.choice(pool)
        b = Block.make(parent.id, parent.slot + rng.randint(1, 3), rng.randint(0, 3), bytes([i % 256]))
        blocks.append(b)
        pool.append(b)
    return blocks


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25))
def test_prefix_is_partial_order(seed, size):
    t = BlockTree()
    for b in random_blocks(seed, size):
        t.insert(b)
    ids = list(t.blocks)
    for x in ids:
        assert t.is_prefix(x, x)
        for y in ids:
            if x != y and t.is_prefix(x, y):
                assert not t.is_prefix(y, x)
                for z in ids:
                    if t.is_prefix(y, z):
                        assert t.is_prefix(x, z)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10**6), st.integers(1, 25), st.randoms())
def test_highest_permutation_invariant_and_replay(seed, size, rnd):
    blocks = random_blocks(seed, size)
    t1 = BlockTree()
    for b in blocks:
        t1.insert(b)
    shuffled = list(blocks)
    rnd.shuffle(shuffled)
    t2 = BlockTree()
    for b in shuffled:
        t2.insert(b)
    assert t2.pending == 0
    assert t1.blocks == t2.blocks and t1.children == t2.children and t1.height == t2.height
    ids = list(t1.blocks)
    again = list(ids)
    rnd.shuffle(again)
    assert highest(ids, t1) == highest(again, t2)


def test_weights_counts_subtree_votes():
    t, a, b, a2 = chain_tree()
    root, counts = t.weights([b.id, a.id, a2.id, b.id])
    assert root == GENESIS.id
    assert counts == {GENESIS.id: 4, a.id: 3, b.id: 2, a2.id: 1}
    root, counts = t.weights([b.id, b.id])
    assert root == b.id and counts == {b.id: 2}
