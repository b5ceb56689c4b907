"""Block storage and the prefix relation shared by every protocol variant.

A log is represented by the id of its tip block; the chain from genesis to
that tip is recovered from the tree.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field
from typing import Callable, Iterable, Optional

BlockId = bytes
Hasher = Callable[[bytes], bytes]


class UnknownBlock(KeyError):
    pass


class ConflictingContent(ValueError):
    pass


class InvalidBlock(ValueError):
    pass


def default_hasher(data: bytes) -> bytes:
    return hashlib.blake2b(data, digest_size=32).digest()


def block_id(parent: Optional[BlockId], slot: int, proposer: int, payload: bytes,
             hasher: Hasher = default_hasher) -> BlockId:
    """Content hash of the block fields; parent ``None`` marks genesis."""
    head = struct.pack(">?qq", parent is None, slot, proposer)
    return hasher(head + (parent or b"") + payload)


@dataclass(frozen=True)
class Block:
    parent: Optional[BlockId]
    slot: int
    proposer: int
    payload: bytes = b""
    id: BlockId = field(default=b"", compare=False)

    def __post_init__(self):
        if not self.id:
            object.__setattr__(self, "id", block_id(self.parent, self.slot, self.proposer, self.payload))

    @classmethod
    def make(cls, parent: Optional[BlockId], slot: int, proposer: int, payload: bytes = b"",
             hasher: Hasher = default_hasher) -> "Block":
        return cls(parent, slot, proposer, payload, block_id(parent, slot, proposer, payload, hasher))

    def same_content(self, other: "Block") -> bool:
        return (self.parent, self.slot, self.proposer, self.payload) == (
            other.parent, other.slot, other.proposer, other.payload)

    def to_json(self) -> dict:
        return {
            "id": self.id.hex(),
            "parent": self.parent.hex() if self.parent is not None else None,
            "slot": self.slot,
            "proposer": self.proposer,
            "payload": self.payload.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "Block":
        parent = bytes.fromhex(d["parent"]) if d["parent"] is not None else None
        return cls(parent, d["slot"], d["proposer"], bytes.fromhex(d["payload"]), bytes.fromhex(d["id"]))


GENESIS = Block(None, 0, -1, b"genesis")


def tie_break_key(block: Block):
    """Sort key where the smallest key is the "highest" block."""
    return (-block.slot, block.id)


class BlockTree:
    """Append-only block DAG rooted at genesis.

    Blocks whose parent is not yet known are held back and attached as soon
    as the parent arrives, so the tree itself never exposes orphans.
    """

    def __init__(self, genesis: Block = GENESIS):
        self.genesis = genesis
        self.blocks: dict[BlockId, Block] = {genesis.id: genesis}
        self.children: dict[BlockId, list[BlockId]] = {genesis.id: []}
        self.height: dict[BlockId, int] = {genesis.id: 0}
        self._orphans: dict[BlockId, dict[BlockId, Block]] = {}

    def __contains__(self, bid) -> bool:
        return bid in self.blocks

    def __len__(self) -> int:
        return len(self.blocks)

    def __getitem__(self, bid: BlockId) -> Block:
        try:
            return self.blocks[bid]
        except KeyError:
            raise UnknownBlock(bid.hex() if isinstance(bid, bytes) else bid) from None

    @property
    def pending(self) -> int:
        return sum(len(v) for v in self._orphans.values())

    def insert(self, b: Block) -> list[Block]:
        """Insert ``b``; returns the blocks that became attached (possibly none)."""
        known = self.blocks.get(b.id)
        if known is not None:
            if not known.same_content(b):
                raise ConflictingContent(b.id.hex())
            return []
        for waiting in self._orphans.values():
            other = waiting.get(b.id)
            if other is not None:
                if not other.same_content(b):
                    raise ConflictingContent(b.id.hex())
                return []
        if b.parent is None:
            raise InvalidBlock("second genesis block")
        if b.parent not in self.blocks:
            self._orphans.setdefault(b.parent, {})[b.id] = b
            return []
        attached = []
        stack = [b]
        while stack:
            blk = stack.pop()
            parent = self.blocks[blk.parent]
            if blk.slot <= parent.slot:
                raise InvalidBlock(f"slot {blk.slot} not above parent slot {parent.slot}")
            self.blocks[blk.id] = blk
            self.children[blk.id] = []
            self.children[blk.parent].append(blk.id)
            self.height[blk.id] = self.height[blk.parent] + 1
            attached.append(blk)
            # children are re-sorted so iteration order never depends on arrival order
            self.children[blk.parent].sort()
            waiting = self._orphans.pop(blk.id, None)
            if waiting:
                stack.extend(waiting[k] for k in sorted(waiting))
        return attached

    def is_prefix(self, a: BlockId, b: BlockId) -> bool:
        blocks = self.blocks
        if a not in blocks:
            raise UnknownBlock(a.hex())
        if b not in blocks:
            raise UnknownBlock(b.hex())
        target_slot = blocks[a].slot
        cur = blocks[b]
        while cur.slot > target_slot:
            cur = blocks[cur.parent]
        return cur.id == a

    def ancestor_at_or_below(self, b: BlockId, slot: int) -> BlockId:
        cur = self[b]
        while cur.slot > slot:
            cur = self.blocks[cur.parent]
        return cur.id

    def chain(self, tip: BlockId) -> list[BlockId]:
        """Block ids from genesis to ``tip`` inclusive."""
        out = []
        cur = self[tip]
        while True:
            out.append(cur.id)
            if cur.parent is None:
                break
            cur = self.blocks[cur.parent]
        out.reverse()
        return out

    def common_ancestor(self, ids: Iterable[BlockId]) -> BlockId:
        blocks = self.blocks
        height = self.height
        it = iter(ids)
        acc = next(it)
        for other in it:
            a, b = acc, other
            while height[a] > height[b]:
                a = blocks[a].parent
            while height[b] > height[a]:
                b = blocks[b].parent
            while a != b:
                a = blocks[a].parent
                b = blocks[b].parent
            acc = a
        return acc

    def weights(self, logs: Iterable[BlockId]) -> tuple[BlockId, dict[BlockId, int]]:
        """Count, for every block, how many of ``logs`` extend it.

        Counting stops at the common ancestor of all known logs: that block
        and every one of its ancestors is extended by all of them. Unknown
        logs are ignored. Returns ``(common_ancestor, counts)``.
        """
        blocks = self.blocks
        per_tip: dict[BlockId, int] = {}
        for log in logs:
            if log in blocks:
                per_tip[log] = per_tip.get(log, 0) + 1
        if not per_tip:
            return self.genesis.id, {}
        root = self.common_ancestor(per_tip)
        counts: dict[BlockId, int] = {}
        for tip, c in per_tip.items():
            cur = tip
            while cur != root:
                counts[cur] = counts.get(cur, 0) + c
                cur = blocks[cur].parent
        counts[root] = sum(per_tip.values())
        return root, counts

    def descendants(self, b: BlockId) -> list[BlockId]:
        out = []
        stack = [b]
        while stack:
            cur = stack.pop()
            out.append(cur)
            stack.extend(self.children[cur])
        return out


def insert_block(tree: BlockTree, b: Block) -> BlockTree:
    tree.insert(b)
    return tree


def is_prefix(tree: BlockTree, a: BlockId, b: BlockId) -> bool:
    """True iff ``a`` lies on the path from genesis to ``b`` (reflexive)."""
    return tree.is_prefix(a, b)


def highest(candidates: Iterable[BlockId], tree: BlockTree) -> Optional[BlockId]:
    """Greatest slot wins, ties go to the lexicographically smallest id."""
    best = None
    best_key = None
    for c in candidates:
        key = tie_break_key(tree[c])
        if best_key is None or key < best_key:
            best, best_key = c, key
    return best
