"""Slot-structured validator state machines for the five protocol variants.

Round layout (Δ ticks per round, ``r`` = round within the slot):

=============  ======  ==================================================
variant        rounds  rounds
=============  ======  ==================================================
BASELINE_4D    4       propose / GA input / decide / GA store
PROB_3D        3       propose / GA input / GA store
FASTCONFIRM    4       propose / vote / fast confirm / end of slot
SSF            4       propose / vote / fast confirm + FFG vote / ack + end
STREAMLINED    3       propose / vote + FFG vote / end of slot
=============  ======  ==================================================

BASELINE_4D and PROB_3D run one graded-agreement instance per slot
(three-grade and two-grade respectively) whose inputs are the head votes.
The fast-confirm family keeps the same time-shifted quorum rule directly on
per-slot vote tallies: the lock counts only voters whose vote was already
stored at the end of the previous slot and is still held, against the
participation seen now.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import Callable, Optional, Union

from .core import Block, BlockId, BlockTree, GENESIS, highest
from .ffg import (Ack, Checkpoint, FFGVote, GENESIS_CHECKPOINT, JustificationState,
                  apply_ffg_votes, record_ack, split_finalize)
from .graded_agreement import GAConfig, GAInstance, GAMessage, Tally, make_instance


class Variant(str, enum.Enum):
    BASELINE_4D = "baseline_4d"
    PROB_3D = "prob_3d"
    FASTCONFIRM = "fastconfirm"
    SSF = "ssf"
    STREAMLINED = "streamlined"

    @property
    def rounds(self) -> int:
        return 3 if self in (Variant.PROB_3D, Variant.STREAMLINED) else 4

    @property
    def uses_ga(self) -> bool:
        return self in (Variant.BASELINE_4D, Variant.PROB_3D)

    @property
    def has_ffg(self) -> bool:
        return self in (Variant.SSF, Variant.STREAMLINED)


class NotLeader(Exception):
    pass


class InvalidProposal(Exception):
    pass


@dataclass(frozen=True)
class QuorumCert:
    block: BlockId
    slot: int
    signers: frozenset

    def to_json(self):
        return {"block": self.block.hex(), "slot": self.slot, "signers": sorted(self.signers)}


@dataclass(frozen=True)
class Proposal:
    sender: int
    slot: int
    block: Block
    b_C: BlockId
    Q_C: Optional[QuorumCert] = None
    LJ: Optional[Checkpoint] = None

    kind = "propose"


@dataclass(frozen=True)
class HeadVote:
    sender: int
    slot: int
    block: BlockId

    kind = "head-vote"


@dataclass(frozen=True)
class BlockAnnounce:
    sender: int
    block: Block

    kind = "block"


Message = Union[Proposal, HeadVote, BlockAnnounce, GAMessage, FFGVote, Ack]


def quorum(n: int) -> int:
    """Smallest signer count that is at least 2/3 of ``n``."""
    return -(-2 * n // 3)


class ValidatorState:
    """Protocol variables and message handling for one simulated validator."""

    def __init__(self, me: int, variant: Variant, n: int, leader: Callable[[int], int],
                 delta: int = 1, eta: Optional[int] = None, kappa: int = 6,
                 stakes: Optional[dict] = None):
        self.me = me
        self.variant = Variant(variant)
        self.n = n
        self.leader = leader
        self.delta = delta
        self.eta = eta
        self.kappa = kappa
        self.tree = BlockTree()
        g = GENESIS.id
        self.b_C = g
        self.b_C_prime = g
        self.Q_C: Optional[QuorumCert] = None
        self.L_s = g
        self.candidate = g
        self.LJ_prime = GENESIS_CHECKPOINT
        self.V_prime: dict = {}
        self.V_prime_slot = -1
        self.js = JustificationState(stakes if stakes is not None else {i: 32 for i in range(n)},
                                     tree=self.tree, track_offenses=False)
        self.justified_at: dict[Checkpoint, int] = {GENESIS_CHECKPOINT: 0}
        self.decided = g
        self.confirmed = g
        self.proposals: dict[int, Proposal] = {}
        self.heads: dict[int, BlockId] = {}
        self.ffg_targets: dict[int, Checkpoint] = {}
        self.slot = 0
        self.events: list[tuple[str, dict]] = []
        # raw message history, per slot / GA instance
        self._vote_msgs: dict[int, list[tuple[int, BlockId]]] = {}
        self._exact: dict[int, Tally] = {}
        self._windowed: dict[int, Tally] = {}
        self._ga_msgs: dict[int, list[GAMessage]] = {}
        self.ga: dict[int, GAInstance] = {}
        self._ga_start: dict[int, int] = {}
        self._pending_ffg: list[FFGVote] = []

    # -- derived views -------------------------------------------------

    @property
    def LJ(self) -> Checkpoint:
        return self.js.latest_justified

    @property
    def J(self) -> set:
        return self.js.J

    @property
    def V(self) -> Tally:
        """Current support view: the tally of the previous slot's votes."""
        return self._support(self.slot - 1)

    def _exact_tally(self, slot: int) -> Tally:
        t = self._exact.get(slot)
        if t is None:
            t = self._exact[slot] = Tally(slot, None)
            for sender, log in self._vote_msgs.get(slot, ()):
                t.add(sender, slot, log)
        return t

    def _support(self, slot: int) -> Tally:
        if self.eta is None or self.eta == 1:
            return self._exact_tally(slot)
        t = self._windowed.get(slot)
        if t is None:
            t = self._windowed[slot] = Tally(slot, self.eta)
            for i in range(slot - self.eta + 1, slot + 1):
                for sender, log in self._vote_msgs.get(i, ()):
                    t.add(sender, i, log)
        return t

    def _highest_supported(self, tally: Tally, base: BlockId, stored=None) -> Optional[BlockId]:
        part = tally.participation
        _, counts = tally.support(self.tree, stored)
        tree = self.tree
        cands = [b for b, c in counts.items() if 2 * c > part and tree.is_prefix(base, b)]
        return highest(cands, tree)

    def _emit(self, kind: str, **fields):
        self.events.append((kind, fields))

    # -- message intake --------------------------------------------------

    def receive(self, msg: Message, t: int) -> None:
        if isinstance(msg, HeadVote):
            self._on_head_vote(msg)
        elif isinstance(msg, Proposal):
            self._insert(msg.block)
            if msg.slot not in self.proposals and msg.sender == self.leader(msg.slot):
                self.proposals[msg.slot] = msg
        elif isinstance(msg, BlockAnnounce):
            self._insert(msg.block)
        elif isinstance(msg, GAMessage):
            self._on_ga_message(msg)
        elif isinstance(msg, FFGVote):
            self._on_ffg(msg)
        elif isinstance(msg, Ack):
            record_ack(self.js, msg)
            self._run_finalize()

    def _insert(self, block: Block):
        attached = self.tree.insert(block)
        if attached and self._pending_ffg:
            pending, self._pending_ffg = self._pending_ffg, []
            for v in pending:
                self._on_ffg(v)

    def _on_head_vote(self, msg: HeadVote):
        self._vote_msgs.setdefault(msg.slot, []).append((msg.sender, msg.block))
        t = self._exact.get(msg.slot)
        if t is not None:
            t.add(msg.sender, msg.slot, msg.block)
        if self._windowed:
            for k, tally in self._windowed.items():
                tally.add(msg.sender, msg.slot, msg.block)

    def _on_ga_message(self, msg: GAMessage):
        self._ga_msgs.setdefault(msg.instance, []).append(msg)
        for inst in self.ga.values():
            inst.receive(msg)

    def _on_ffg(self, vote: FFGVote):
        if vote.source.block not in self.tree or vote.target.block not in self.tree:
            self._pending_ffg.append(vote)
            return
        _, newly = apply_ffg_votes(self.js, [vote])
        for cp in newly:
            self.justified_at[cp] = self.slot
            self._emit("justify", checkpoint=cp.to_json())
        if newly:
            self._run_finalize()

    def _run_finalize(self):
        fin, ssf = split_finalize(self.js)
        for cp in fin:
            self._emit("finalize", checkpoint=cp.to_json())
        for cp in ssf:
            self._emit("ssf-finalize", checkpoint=cp.to_json())

    # -- round driver ----------------------------------------------------

    def on_round(self, slot: int, r: int, t: int) -> list[Message]:
        """Run the actions of round ``r`` of ``slot`` at tick ``t``."""
        self.slot = slot
        v = self.variant
        out: list[Message] = []
        if v.uses_ga:
            self._tick_gas(t)
        if r == 0:
            if v.uses_ga:
                prev = self.ga.get(slot - 1)
                top = prev.highest_output(0) if prev else None
                self.candidate = top if top is not None else GENESIS.id
            if self.leader(slot) == self.me:
                out.append(self.propose(slot))
        elif r == 1:
            out.extend(self.vote(self.proposals.get(slot), slot, t))
        elif r == 2:
            if v is Variant.BASELINE_4D:
                self.decide(slot)
            elif v is Variant.FASTCONFIRM:
                self.fast_confirm(slot)
            elif v is Variant.SSF:
                self.fast_confirm(slot)
                out.append(self.ffg_vote(slot))
            elif v is Variant.STREAMLINED:
                self.end_of_slot(slot)
        elif r == 3:
            if v is Variant.SSF:
                ack = self.acknowledge(slot)
                if ack is not None:
                    out.append(ack)
            if v in (Variant.FASTCONFIRM, Variant.SSF):
                self.end_of_slot(slot)
        if v is Variant.PROB_3D and r == 2:
            self._prune(slot)
        if v is Variant.BASELINE_4D and r == 3:
            self._prune(slot)
        return out

    def _tick_gas(self, t: int):
        for idx in sorted(self.ga):
            local = t - self._ga_start[idx]
            inst = self.ga[idx]
            if 0 < local <= inst.config.duration:
                outs = inst.tick(local)
                by_grade: dict[int, list] = {}
                for o in outs:
                    by_grade.setdefault(o.grade, []).append(o.log)
                for g, logs in by_grade.items():
                    self._emit("ga-output", instance=idx, grade=g,
                               log=highest(logs, self.tree).hex())

    # -- protocol operations ---------------------------------------------

    def propose(self, slot: int) -> Proposal:
        if self.leader(slot) != self.me:
            raise NotLeader(f"validator {self.me} is not the leader of slot {slot}")
        v = self.variant
        if v.uses_ga:
            parent = self.candidate
            b_C, qc, lj = parent, None, None
        else:
            if v.has_ffg and not self.tree.is_prefix(self.LJ.block, self.b_C):
                self.b_C, self.Q_C = self.LJ.block, None
            parent = self._highest_supported(self._support(slot - 1), self.b_C) or self.b_C
            b_C, qc = self.b_C, self.Q_C
            lj = self.LJ if v.has_ffg else None
        block = Block.make(parent, slot, self.me)
        self.tree.insert(block)
        return Proposal(self.me, slot, block, b_C, qc, lj)

    def valid_proposal(self, p: Proposal, slot: int) -> bool:
        tree = self.tree
        if p.slot != slot or p.sender != self.leader(slot):
            return False
        blk = p.block
        if blk.slot != slot or blk.proposer != p.sender or blk.id not in tree:
            return False
        if self.variant.uses_ga:
            return True
        if p.b_C not in tree or not tree.is_prefix(p.b_C, blk.id):
            return False
        if p.Q_C is None:
            anchor = p.LJ.block if (self.variant.has_ffg and p.LJ is not None) else GENESIS.id
            if p.b_C != anchor:
                return False
        elif p.Q_C.block != p.b_C or len(p.Q_C.signers) < quorum(self.n):
            return False
        if self.variant.has_ffg:
            if p.LJ is None or p.LJ not in self.js.J:
                return False
        return True

    def vote(self, proposal: Optional[Proposal], slot: int, t: int = 0) -> list[Message]:
        """Cast this slot's head vote (GA input for the GA-based variants)."""
        v = self.variant
        tree = self.tree
        valid = proposal is not None and self.valid_proposal(proposal, slot)
        if v.uses_ga:
            prev = self.ga.get(slot - 1)
            top = prev.highest_output(1) if prev else None
            self.L_s = top if top is not None else GENESIS.id
            if v is Variant.PROB_3D:
                self._kappa_confirm(slot)
            log = proposal.block.id if valid and tree.is_prefix(self.L_s, proposal.block.id) else self.L_s
            self.heads[slot] = log
            inst = self._start_ga(slot, t)
            msg = inst.input(log)
            self._emit("lock", slot=slot, lock=self.L_s.hex(), valid_proposal=valid)
            return [msg]

        if v.has_ffg:
            if valid and proposal.LJ.slot > self.LJ_prime.slot:
                self.LJ_prime = proposal.LJ
            if not tree.is_prefix(self.LJ_prime.block, self.b_C_prime):
                self.b_C_prime = self.LJ_prime.block
        if valid and tree.is_prefix(self.b_C_prime, proposal.b_C):
            self.b_C_prime = proposal.b_C
        stored = self.V_prime if self.V_prime_slot == slot - 1 else {}
        lock = self._highest_supported(self._support(slot - 1), self.b_C_prime, stored)
        self.L_s = lock if lock is not None else self.b_C_prime
        target = proposal.block.id if valid and tree.is_prefix(self.L_s, proposal.block.id) else self.L_s
        self.heads[slot] = target
        self._emit("lock", slot=slot, lock=self.L_s.hex(), b_c_prime=self.b_C_prime.hex(),
                   valid_proposal=valid)
        out: list[Message] = [HeadVote(self.me, slot, target)]
        if v is Variant.STREAMLINED:
            out.append(self.ffg_vote(slot))
            self._confirm_from(slot - 1)
        return out

    def _start_ga(self, slot: int, t: int) -> GAInstance:
        grades = 3 if self.variant is Variant.BASELINE_4D else 2
        inst = make_instance(GAConfig(grades, self.delta, self.eta), self.me, slot, self.tree)
        lo = slot if self.eta is None else slot - self.eta + 1
        for i in range(lo, slot + 1):
            for m in self._ga_msgs.get(i, ()):
                inst.receive(m)
        self.ga[slot] = inst
        self._ga_start[slot] = t
        return inst

    def _kappa_confirm(self, slot: int):
        depth = slot - self.kappa
        if depth < 1:
            return
        anc = self.tree.ancestor_at_or_below(self.L_s, depth)
        if anc == self.confirmed or self.tree.is_prefix(anc, self.confirmed):
            return
        if self.tree.is_prefix(self.confirmed, anc):
            self.confirmed = anc
            self._emit("confirm", slot=slot, block=anc.hex())
        else:
            self._emit("confirm-conflict", slot=slot, block=anc.hex(), previous=self.confirmed.hex())

    def _certify(self, slot: int, base: Optional[BlockId]) -> Optional[QuorumCert]:
        """Highest block whose subtree holds >= 2/3 of the full set's votes from ``slot``."""
        tally = self._exact_tally(slot)
        _, counts = tally.support(self.tree)
        need = quorum(self.n)
        tree = self.tree
        cands = [b for b, c in counts.items() if c >= need and (base is None or tree.is_prefix(base, b))]
        best = highest(cands, tree)
        if best is None:
            return None
        signers = frozenset(s for s, log in tally.current().items()
                            if log in tree and tree.is_prefix(best, log))
        return QuorumCert(best, slot, signers)

    def fast_confirm(self, slot: int):
        """Confirm the highest block with a same-slot 2/3 quorum in its subtree."""
        base = self.LJ_prime.block if self.variant.has_ffg else None
        qc = self._certify(slot, base)
        if qc is None:
            if self.variant.has_ffg:
                self.b_C, self.Q_C = self.LJ_prime.block, None
            return None, None
        if self.variant is Variant.FASTCONFIRM and self.tree.is_prefix(qc.block, self.b_C) and qc.block != self.b_C:
            return None, None
        self.b_C, self.Q_C = qc.block, qc
        if self.tree.is_prefix(self.confirmed, qc.block):
            self.confirmed = qc.block
        self._emit("confirm", slot=slot, block=qc.block.hex(), signers=len(qc.signers))
        return qc.block, qc

    def _confirm_from(self, slot: int):
        # streamlined: confirmation of the previous slot's votes happens after the FFG vote
        if slot < 1:
            return
        qc = self._certify(slot, self.LJ_prime.block)
        if qc is None:
            self.b_C, self.Q_C = self.LJ_prime.block, None
            return
        self.b_C, self.Q_C = qc.block, qc
        if self.tree.is_prefix(self.confirmed, qc.block):
            self.confirmed = qc.block
        self._emit("confirm", slot=self.slot, block=qc.block.hex(), signers=len(qc.signers))

    def ffg_vote(self, slot: int) -> FFGVote:
        src = self.LJ_prime
        tgt_block = self.b_C if self.tree.is_prefix(src.block, self.b_C) else src.block
        target = Checkpoint(tgt_block, slot)
        self.ffg_targets[slot] = target
        return FFGVote(self.me, src, target, slot)

    def decide(self, slot: int) -> list[BlockId]:
        prev = self.ga.get(slot - 1)
        top = prev.highest_output(2) if prev else None
        if top is None:
            return []
        tree = self.tree
        if tree.is_prefix(top, self.decided):
            return []
        if not tree.is_prefix(self.decided, top):
            self._emit("decide-conflict", slot=slot, block=top.hex(), previous=self.decided.hex())
            return []
        chain = tree.chain(top)
        new = chain[chain.index(self.decided) + 1:]
        self.decided = top
        self.confirmed = top
        self._emit("decide", slot=slot, block=top.hex(), count=len(new))
        return new

    def acknowledge(self, slot: int) -> Optional[Ack]:
        target = self.ffg_targets.get(slot)
        if target is None or target not in self.js.J or self.justified_at.get(target) != slot:
            return None
        return Ack(self.me, target)

    def end_of_slot(self, slot: int):
        if self.variant.has_ffg:
            self.LJ_prime = self.LJ
        self.V_prime = self._support(slot).snapshot()
        self.V_prime_slot = slot
        self.b_C_prime = self.b_C
        self._prune(slot)

    def _prune(self, slot: int):
        keep = slot - (self.eta or 1) - 2
        for d in (self._exact, self._windowed, self._vote_msgs, self._ga_msgs):
            for k in [k for k in d if k < keep]:
                del d[k]
        for k in [k for k in self.ga if k < slot - 2]:
            del self.ga[k]
            del self._ga_start[k]


# Functional aliases mirroring the operation names used in the docs.

def propose(state: ValidatorState, slot: int) -> Proposal:
    return state.propose(slot)


def vote(state: ValidatorState, proposal: Optional[Proposal], slot: int) -> list[Message]:
    return state.vote(proposal, slot)


def fast_confirm(state: ValidatorState, slot: int):
    return state.fast_confirm(slot)


def ffg_vote(state: ValidatorState, slot: int) -> FFGVote:
    return state.ffg_vote(slot)


def decide(state: ValidatorState, slot: int) -> list[BlockId]:
    return state.decide(slot)


def acknowledge(state: ValidatorState, slot: int) -> Optional[Ack]:
    return state.acknowledge(slot)


def end_of_slot(state: ValidatorState, slot: int) -> ValidatorState:
    state.end_of_slot(slot)
    return state
