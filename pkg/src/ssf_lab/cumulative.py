"""Committee-based cumulative finality accounting.

Validators with stake at or above ``M`` are "large"; everyone else joins a
slot committee with probability ``min(1, stake / M)``. Three modifications
govern how repeated committee membership turns into attested stake:

* MOD1: nobody is guaranteed a seat. Each validator sits at most once per
  window and large validators are spread evenly across the window.
* MOD2: large validators sit every slot with ``stake / window`` of weight.
  Their contribution to any single block is capped at their stake.
* MOD3: committees as in the unmodified design (large validators every slot
  at full stake). A validator's stake counts at most once per block.

A vote for block ``B`` credits ``B`` and its ancestors down to (excluding)
the last block the voter attested, except for MOD2 large validators which
keep crediting ancestors until their per-block cap is reached.
Attack cost is attested stake divided by three.
"""

from __future__ import annotations

import bisect
import enum
import zlib
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .core import Block, BlockId, BlockTree, GENESIS, UnknownBlock


class Modification(str, enum.Enum):
    MOD1 = "mod1"
    MOD2 = "mod2"
    MOD3 = "mod3"


MOD1, MOD2, MOD3 = Modification.MOD1, Modification.MOD2, Modification.MOD3

ACCOUNTABLE_FRACTION = 1 / 3


@dataclass
class StakeDistribution:
    stakes: np.ndarray
    M: float
    ids: Optional[np.ndarray] = None

    def __post_init__(self):
        self.stakes = np.asarray(self.stakes, dtype=float)
        if self.ids is None:
            self.ids = np.arange(len(self.stakes))
        if self.M <= 0:
            raise ValueError("M must be positive")
        if len(self.stakes) and self.stakes.min() <= 0:
            raise ValueError("stakes must be positive")

    @classmethod
    def from_pairs(cls, pairs: Iterable[tuple[int, float]], M: float) -> "StakeDistribution":
        pairs = list(pairs)
        return cls(np.array([s for _, s in pairs], dtype=float), M,
                   np.array([i for i, _ in pairs], dtype=int))

    def __len__(self):
        return len(self.stakes)

    @property
    def total(self) -> float:
        return float(self.stakes.sum())

    @property
    def large(self) -> np.ndarray:
        return self.stakes >= self.M

    def inclusion_probability(self) -> np.ndarray:
        return np.minimum(1.0, self.stakes / self.M)


@dataclass
class CommitteeSample:
    slot: int
    members: np.ndarray  # indices into the distribution
    effective: np.ndarray

    @property
    def stake(self) -> float:
        return float(self.effective.sum())


def slot_rng(seed: int, slot: int, component: str = "committee") -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, zlib.crc32(component.encode()), slot]))


def _spread_offsets(n: int, window: int, seed: int, cycle: int) -> np.ndarray:
    order = slot_rng(seed, cycle, "spread").permutation(n)
    off = np.empty(n, dtype=int)
    off[order] = np.arange(n) % window
    return off


def sample_committee(dist: StakeDistribution, slot: int, mod: Modification,
                     rng: np.random.Generator, window: int = 32,
                     exclude: Optional[np.ndarray] = None, seed: int = 0) -> CommitteeSample:
    """Draw the committee of ``slot`` (slots count from 1).

    ``exclude`` is a boolean mask of validators that may not sit this slot
    (MOD1 uses it to enforce one seat per window).
    """
    mod = Modification(mod)
    p = dist.inclusion_probability()
    large = dist.large
    drawn = rng.random(len(dist)) < p
    eff = dist.stakes.copy()
    if mod is MOD1:
        cycle, pos = divmod(slot - 1, window)
        idx = np.flatnonzero(large)
        seat = np.zeros(len(dist), dtype=bool)
        seat[idx] = _spread_offsets(len(idx), window, seed, cycle) == pos
        chosen = np.where(large, seat, drawn)
    else:
        chosen = drawn | large
        if mod is MOD2:
            eff = np.where(large, dist.stakes / window, dist.stakes)
    if exclude is not None:
        chosen &= ~exclude
    members = np.flatnonzero(chosen)
    return CommitteeSample(slot, members, eff[members])


@dataclass
class FinalityLedger:
    dist: StakeDistribution
    modification: Modification = MOD3
    window: int = 32
    tree: BlockTree = field(default_factory=BlockTree)
    attested: dict = field(default_factory=dict)
    voters: dict = field(default_factory=dict)

    def __post_init__(self):
        self.modification = Modification(self.modification)
        self._index: dict[BlockId, int] = {GENESIS.id: 0}
        self._ids: list[BlockId] = [GENESIS.id]
        self._last = np.full(len(self.dist), -1, dtype=np.int64)
        self._large_rows = np.flatnonzero(self.dist.large)
        self._large_contrib: dict[BlockId, np.ndarray] = {}
        # per block: sorted (slot, attested) after each slot that touched it
        self.history: dict[BlockId, list[tuple[int, float]]] = {}

    def add_block(self, b: Block):
        self.tree.insert(b)
        if b.id not in self._index:
            self._index[b.id] = len(self._ids)
            self._ids.append(b.id)

    def stake(self, block: BlockId) -> float:
        if block not in self.tree:
            raise UnknownBlock(block.hex())
        return self.attested.get(block, 0.0)

    def stake_at(self, block: BlockId, slot: int) -> float:
        h = self.history.get(block, [])
        k = bisect.bisect_right(h, (slot, float("inf")))
        return h[k - 1][1] if k else 0.0


def _credit(ledger: FinalityLedger, touched: dict, b: BlockId, amount: float):
    ledger.attested[b] = ledger.attested.get(b, 0.0) + amount
    touched[b] = True


def accumulate(ledger: FinalityLedger, sample: CommitteeSample, block: BlockId) -> FinalityLedger:
    """Credit one slot's committee votes for ``block``."""
    tree = ledger.tree
    if block not in tree:
        raise UnknownBlock(block.hex())
    touched: dict = {}
    members, eff = sample.members, sample.effective
    ledger.voters.setdefault(block, set()).update(int(ledger.dist.ids[m]) for m in members)
    if ledger.modification is MOD2 and len(ledger._large_rows):
        is_large = ledger.dist.large[members]
        lrows = ledger._large_rows
        present = np.isin(lrows, members[is_large])
        eff_vec = np.where(present, ledger.dist.stakes[lrows] / ledger.window, 0.0)
        cap = ledger.dist.stakes[lrows]
        cur = block
        while cur is not None:
            c = ledger._large_contrib.get(cur)
            if c is None:
                c = ledger._large_contrib[cur] = np.zeros(len(lrows))
            add = np.minimum(eff_vec, cap - c)
            total = float(add.sum())
            if total <= 0:
                break
            c += add
            _credit(ledger, touched, cur, total)
            cur = tree[cur].parent
        members, eff = members[~is_large], eff[~is_large]
    if len(members):
        target = ledger._index[block]
        stops = ledger._last[members]
        uniq, inv = np.unique(stops, return_inverse=True)
        sums = np.bincount(inv, weights=eff)
        for u, amount in zip(uniq.tolist(), sums.tolist()):
            if u < 0:
                stop = None
            else:
                prev = ledger._ids[u]
                stop = prev if tree.is_prefix(prev, block) else tree.common_ancestor((prev, block))
            cur = block
            while cur is not None and cur != stop:
                _credit(ledger, touched, cur, amount)
                cur = tree[cur].parent
        ledger._last[members] = target
    for b in touched:
        h = ledger.history.setdefault(b, [])
        if h and h[-1][0] == sample.slot:
            h[-1] = (sample.slot, ledger.attested[b])
        else:
            h.append((sample.slot, ledger.attested[b]))
    return ledger


def attack_cost(ledger: FinalityLedger, block: BlockId) -> float:
    return ledger.stake(block) * ACCOUNTABLE_FRACTION


def attack_cost_curve(ledger: FinalityLedger, block: BlockId,
                      depths: Iterable[int]) -> list[tuple[int, float]]:
    """Cost after the votes of ``d`` slots, starting with the block's own slot."""
    if block not in ledger.tree:
        raise UnknownBlock(block.hex())
    s = ledger.tree[block].slot
    return [(d, ledger.stake_at(block, s + d - 1) * ACCOUNTABLE_FRACTION if d > 0 else 0.0)
            for d in depths]


# -- Chapter fixture -------------------------------------------------------

FIXTURE_LARGE_COUNT = 512
FIXTURE_LARGE_STAKE = 4608.0  # 512 x 4608 = 2,359,296 ETH
FIXTURE_M = 4096.0
FIXTURE_SMALL_STAKE = 32.0
FIXTURE_SMALL_PER_SLOT = 8192  # 8192 x 32 = 262,144 ETH
FIXTURE_SMALL_COUNT = FIXTURE_SMALL_PER_SLOT * int(FIXTURE_M // FIXTURE_SMALL_STAKE)


def ch7_distribution(small_count: int = FIXTURE_SMALL_COUNT) -> StakeDistribution:
    """Large stakers first, then the pool of 32 ETH validators.

    The default pool makes the expected sampled stake per slot exactly
    262,144 ETH.
    """
    stakes = np.concatenate([np.full(FIXTURE_LARGE_COUNT, FIXTURE_LARGE_STAKE),
                             np.full(small_count, FIXTURE_SMALL_STAKE)])
    return StakeDistribution(stakes, FIXTURE_M)


class CommitteeSchedule:
    """Per-slot committees for one run.

    ``fresh=True`` replaces random sampling of small validators with a fixed
    rotation of ``per_slot`` never-seen validators each slot, which makes the
    accounting deterministic.
    """

    def __init__(self, dist: StakeDistribution, mod: Modification, window: int = 32,
                 seed: int = 0, fresh: bool = False, per_slot: int = FIXTURE_SMALL_PER_SLOT):
        self.dist = dist
        self.mod = Modification(mod)
        self.window = window
        self.seed = seed
        self.fresh = fresh
        self.per_slot = per_slot
        self._seen_window = np.full(len(dist), -1, dtype=np.int64)
        self._small = np.flatnonzero(~dist.large)

    def committee(self, slot: int) -> CommitteeSample:
        cycle = (slot - 1) // self.window
        exclude = self._seen_window == cycle if self.mod is MOD1 else None
        if not self.fresh:
            sample = sample_committee(self.dist, slot, self.mod, slot_rng(self.seed, slot),
                                      self.window, exclude, self.seed)
        else:
            base = sample_committee(self.dist, slot, self.mod, _NoDraw(), self.window, exclude, self.seed)
            k = len(self._small)
            start = ((slot - 1) * self.per_slot) % max(k, 1)
            small = self._small[(start + np.arange(min(self.per_slot, k))) % max(k, 1)]
            if exclude is not None:
                small = small[~exclude[small]]
            members = np.concatenate([base.members, small])
            eff = np.concatenate([base.effective, self.dist.stakes[small]])
            sample = CommitteeSample(slot, members, eff)
        if self.mod is MOD1:
            self._seen_window[sample.members] = cycle
        return sample


class _NoDraw:
    """Stand-in generator under which no sub-threshold validator is drawn."""

    def random(self, n):
        return np.ones(n)


def simulate_chain(dist: StakeDistribution, mod: Modification, slots: int,
                   window: int = 32, seed: int = 0, fresh: bool = False) -> tuple[FinalityLedger, list[BlockId]]:
    """One block per slot on a single chain, each slot's committee voting its block."""
    ledger = FinalityLedger(dist, mod, window)
    sched = CommitteeSchedule(dist, mod, window, seed, fresh)
    parent = GENESIS.id
    chain = []
    for s in range(1, slots + 1):
        b = Block.make(parent, s, 0)
        ledger.add_block(b)
        accumulate(ledger, sched.committee(s), b.id)
        chain.append(b.id)
        parent = b.id
    return ledger, chain


def write_curve_csv(path, rows: Iterable[tuple[int, float, str]]):
    import csv
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["depth", "cost_eth", "modification"])
        for d, c, m in rows:
            w.writerow([d, f"{c:.6f}", m])
