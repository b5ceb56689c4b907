"""Casper FFG checkpoint engine over slot-indexed checkpoints."""

from __future__ import annotations

import bisect
import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping, NamedTuple, Optional, Union

from .core import BlockId, BlockTree, GENESIS, UnknownBlock

log = logging.getLogger(__name__)

DOUBLE_VOTE = "DOUBLE_VOTE"
SURROUND = "SURROUND"
STALE_FFG_AFTER_ACK = "STALE_FFG_AFTER_ACK"


class NotFinalized(ValueError):
    pass


class Checkpoint(NamedTuple):
    block: BlockId
    slot: int

    def to_json(self):
        return [self.block.hex(), self.slot]

    @classmethod
    def from_json(cls, v):
        return cls(bytes.fromhex(v[0]), v[1])


GENESIS_CHECKPOINT = Checkpoint(GENESIS.id, 0)


@dataclass(frozen=True)
class FFGVote:
    sender: int
    source: Checkpoint
    target: Checkpoint
    cast_at_slot: int

    kind = "ffg-vote"

    @property
    def link(self) -> tuple[Checkpoint, Checkpoint]:
        return (self.source, self.target)


@dataclass(frozen=True)
class Ack:
    sender: int
    target: Checkpoint

    kind = "ack"


@dataclass(frozen=True)
class SlashingOffense:
    offender: int
    kind: str
    evidence: tuple


def well_formed(vote: FFGVote, tree: Optional[BlockTree] = None) -> bool:
    if vote.source.slot >= vote.target.slot:
        return False
    if tree is None:
        return True
    try:
        return (tree[vote.target.block].slot <= vote.target.slot
                and tree.is_prefix(vote.source.block, vote.target.block))
    except UnknownBlock:
        return False


def supermajority(weight, total) -> bool:
    return 3 * weight >= 2 * total


class _SenderIndex:
    """Per-validator vote/ack history with range lookups for offense checks."""

    __slots__ = ("votes", "by_target_slot", "by_source", "by_target", "by_cast", "acks", "ack_slots")

    def __init__(self):
        self.votes: list[FFGVote] = []
        self.by_target_slot: dict[int, list[FFGVote]] = {}
        self.by_source: list[tuple[int, int]] = []
        self.by_target: list[tuple[int, int]] = []
        self.by_cast: list[tuple[int, int]] = []
        self.acks: list[Ack] = []
        self.ack_slots: list[tuple[int, int]] = []

    def add_vote(self, v: FFGVote):
        i = len(self.votes)
        self.votes.append(v)
        self.by_target_slot.setdefault(v.target.slot, []).append(v)
        bisect.insort(self.by_source, (v.source.slot, i))
        bisect.insort(self.by_target, (v.target.slot, i))
        bisect.insort(self.by_cast, (v.cast_at_slot, i))

    def add_ack(self, a: Ack):
        i = len(self.acks)
        self.acks.append(a)
        bisect.insort(self.ack_slots, (a.target.slot, i))

    def vote_offenses(self, v: FFGVote) -> list["SlashingOffense"]:
        out = []
        for prev in self.by_target_slot.get(v.target.slot, ()):
            if prev.target != v.target:
                out.append(SlashingOffense(v.sender, DOUBLE_VOTE, (prev, v)))
        # earlier vote surrounding v: target above v's target, source below v's source
        k = bisect.bisect_right(self.by_target, (v.target.slot, len(self.votes)))
        for _, i in self.by_target[k:]:
            prev = self.votes[i]
            if prev.source.slot < v.source.slot:
                out.append(SlashingOffense(v.sender, SURROUND, (v, prev)))
        # v surrounding an earlier vote: source above v's source, target below v's target
        k = bisect.bisect_right(self.by_source, (v.source.slot, len(self.votes)))
        for _, i in self.by_source[k:]:
            prev = self.votes[i]
            if prev.target.slot < v.target.slot:
                out.append(SlashingOffense(v.sender, SURROUND, (prev, v)))
        # acknowledged slot in (target, cast]
        k = bisect.bisect_right(self.ack_slots, (v.target.slot, len(self.acks)))
        for slot, i in self.ack_slots[k:]:
            if slot > v.cast_at_slot:
                break
            out.append(SlashingOffense(v.sender, STALE_FFG_AFTER_ACK, (v, self.acks[i])))
        return out

    def ack_offenses(self, a: Ack) -> list["SlashingOffense"]:
        out = []
        k = bisect.bisect_left(self.by_cast, (a.target.slot, -1))
        for _, i in self.by_cast[k:]:
            prev = self.votes[i]
            if prev.target.slot < a.target.slot:
                out.append(SlashingOffense(a.sender, STALE_FFG_AFTER_ACK, (prev, a)))
        return out


@dataclass
class JustificationState:
    stakes: Mapping[int, float]
    tree: Optional[BlockTree] = None
    J: set = field(default_factory=lambda: {GENESIS_CHECKPOINT})
    F: set = field(default_factory=lambda: {GENESIS_CHECKPOINT})
    ssf_finalized: set = field(default_factory=set)
    vote_log: list = field(default_factory=list)
    acks: dict = field(default_factory=dict)
    ack_log: list = field(default_factory=list)
    links: dict = field(default_factory=dict)
    track_offenses: bool = True

    def __post_init__(self):
        self.total = sum(self.stakes.values())
        self._link_weight: dict = {}
        self._ack_weight: dict = {}
        self._lj = None
        self._lj_size = 0
        self._seen: set = set()
        self._by_source: dict[Checkpoint, set] = {}
        # consecutive-slot links and acked checkpoints not yet finalized
        self._consecutive: set = set()
        self._acked: set = set()
        self._index: dict[int, _SenderIndex] = {}

    def index(self, sender: int) -> _SenderIndex:
        idx = self._index.get(sender)
        if idx is None:
            idx = self._index[sender] = _SenderIndex()
        return idx

    def log_vote(self, v: FFGVote) -> bool:
        """Append to the vote log; False for an exact duplicate."""
        key = (v.sender, v.source, v.target)
        if key in self._seen:
            return False
        self._seen.add(key)
        self.vote_log.append(v)
        if self.track_offenses:
            self.index(v.sender).add_vote(v)
        return True

    def stake_of(self, senders: Iterable[int]) -> float:
        return sum(self.stakes.get(s, 0) for s in senders)

    @property
    def latest_justified(self) -> Checkpoint:
        if self._lj is None or self._lj_size != len(self.J):
            self._lj = max(self.J, key=lambda c: (c.slot, c.block))
            self._lj_size = len(self.J)
        return self._lj

    def is_supermajority_link(self, source: Checkpoint, target: Checkpoint) -> bool:
        w = self._link_weight.get((source, target), 0)
        return w > 0 and supermajority(w, self.total)


def apply_ffg_votes(js: JustificationState, votes: Iterable[FFGVote]) -> tuple[JustificationState, list[Checkpoint]]:
    """Record votes; a target is justified by a supermajority link from a justified source."""
    touched = []
    for v in votes:
        if not well_formed(v, js.tree):
            log.debug("skipping malformed FFG vote %s", v)
            continue
        if not js.log_vote(v):
            continue
        voters = js.links.setdefault(v.link, set())
        if v.sender not in voters:
            voters.add(v.sender)
            js._link_weight[v.link] = js._link_weight.get(v.link, 0) + js.stakes.get(v.sender, 0)
        js._by_source.setdefault(v.source, set()).add(v.target)
        if v.target.slot == v.source.slot + 1:
            js._consecutive.add(v.link)
        touched.append(v.link)
    newly: list[Checkpoint] = []
    frontier = []
    for src, tgt in sorted(set(touched)):
        if src in js.J and tgt not in js.J and js.is_supermajority_link(src, tgt):
            js.J.add(tgt)
            newly.append(tgt)
            frontier.append(tgt)
    # justification can cascade when a newly justified checkpoint is itself a source
    while frontier:
        src = frontier.pop()
        for tgt in sorted(js._by_source.get(src, ())):
            if tgt not in js.J and js.is_supermajority_link(src, tgt):
                js.J.add(tgt)
                newly.append(tgt)
                frontier.append(tgt)
    return js, newly


def record_ack(js: JustificationState, ack: Ack) -> None:
    senders = js.acks.setdefault(ack.target, set())
    if ack.sender not in senders:
        senders.add(ack.sender)
        js._ack_weight[ack.target] = js._ack_weight.get(ack.target, 0) + js.stakes.get(ack.sender, 0)
    js.ack_log.append(ack)
    if js.track_offenses:
        js.index(ack.sender).add_ack(ack)
    js._acked.add(ack.target)


def split_finalize(js: JustificationState) -> tuple[list[Checkpoint], list[Checkpoint]]:
    """Newly finalized checkpoints and newly ssf-finalized checkpoints."""
    fin, ssf = [], []
    for link in sorted(js._consecutive):
        src = link[0]
        if src in js.F:
            js._consecutive.discard(link)
        elif src in js.J and js.is_supermajority_link(*link):
            js.F.add(src)
            js._consecutive.discard(link)
            fin.append(src)
    for cp in sorted(js._acked):
        if cp in js.ssf_finalized:
            js._acked.discard(cp)
        elif supermajority(js._ack_weight.get(cp, 0), js.total):
            js.ssf_finalized.add(cp)
            js._acked.discard(cp)
            ssf.append(cp)
    return fin, ssf


def finalize(js: JustificationState) -> list[Checkpoint]:
    """Apply the consecutive-slot finalization rule and the acknowledgment rule.

    Returns checkpoints newly added to ``F`` followed by checkpoints newly
    marked ssf-finalized.
    """
    fin, ssf = split_finalize(js)
    return fin + ssf


def detect_slashable(js: JustificationState, item: Union[FFGVote, Ack]) -> list[SlashingOffense]:
    """Offenses proven by ``item`` together with the history held in ``js``.

    An exact repeat of an earlier vote is not an offense.
    """
    idx = js._index.get(item.sender)
    if idx is None:
        return []
    if isinstance(item, FFGVote):
        if (item.sender, item.source, item.target) in js._seen:
            return []
        return idx.vote_offenses(item)
    return idx.ack_offenses(item)


def all_offenses(votes: Iterable[FFGVote], acks: Iterable[Ack] = ()) -> list[SlashingOffense]:
    """Replay a vote stream, then an ack stream, through :func:`detect_slashable`."""
    js = JustificationState({})
    out = []
    for v in votes:
        out.extend(detect_slashable(js, v))
        js.log_vote(v)
    for a in acks:
        out.extend(detect_slashable(js, a))
        record_ack(js, a)
    return out


def min_reversion_stake(js: JustificationState, cp: Checkpoint, ledger=None):
    """Stake that must be slashable to revert ``cp``.

    With a cumulative ``ledger`` the committee-based attack cost is returned
    instead of the full-set figure.
    """
    if ledger is not None:
        from .cumulative import attack_cost
        return attack_cost(ledger, cp.block)
    if cp not in js.F and cp not in js.ssf_finalized:
        raise NotFinalized(cp)
    return js.total / 3
