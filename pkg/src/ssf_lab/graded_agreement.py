"""Graded agreement with time-shifted quorums.

Two primitives live here:

* ``ThreeGradeGA``: input at 0, snapshots at Δ and 2Δ, outputs grade 0/1/2 at
  3Δ/4Δ/5Δ. Grade 1 compares the 2Δ snapshot against participation seen at
  4Δ, grade 2 compares the Δ snapshot against participation seen at 5Δ.
* ``TwoGradeGA``: input at 0, snapshot at Δ, grade 0 at 2Δ from live votes and
  grade 1 at 3Δ from the snapshot.

All times passed to an instance are local (ticks since the instance input
round). Outputs are prefix-closed: when ``(log, g)`` is emitted, every prefix
of ``log`` is also output with grade ``g``. Only blocks at or above the common
ancestor of the counted logs are listed explicitly.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping, Optional

from .core import BlockId, BlockTree, highest

UNBOUNDED = None


class DuplicateInput(Exception):
    pass


class LateInput(Exception):
    pass


@dataclass(frozen=True)
class GAConfig:
    grades: int = 3
    delta: int = 1
    eta: Optional[int] = UNBOUNDED

    def __post_init__(self):
        if self.grades not in (2, 3):
            raise ValueError("grades must be 2 or 3")
        if self.delta < 1:
            raise ValueError("delta must be >= 1")
        if self.eta is not None and self.eta < 1:
            raise ValueError("eta must be positive or UNBOUNDED")

    @property
    def duration(self) -> int:
        return (5 if self.grades == 3 else 3) * self.delta


@dataclass(frozen=True)
class GAMessage:
    sender: int
    instance: int
    log: BlockId
    sent_at: int = 0

    kind = "ga-input"


@dataclass(frozen=True)
class GradedOutput:
    log: BlockId
    grade: int
    at: int


def tally_equivocators(messages: Iterable[GAMessage]) -> set[int]:
    """Senders that sent two different logs for the same instance."""
    first: dict[tuple[int, int], BlockId] = {}
    out = set()
    for m in messages:
        key = (m.sender, m.instance)
        prev = first.setdefault(key, m.log)
        if prev != m.log:
            out.add(m.sender)
    return out


class Tally:
    """Latest-message tally for one GA instance.

    A message for instance ``i`` is counted by the tally of instance ``k`` iff
    ``k - eta < i <= k`` (only ``i == k`` when eta is unbounded). Per sender the
    message of the most recent counted instance is used. Senders caught
    sending two logs for one counted instance are equivocators: they stay in
    the participation set but never support anything.
    """

    __slots__ = ("instance", "eta", "latest", "first", "equivocators", "senders")

    def __init__(self, instance: int = 0, eta: Optional[int] = UNBOUNDED):
        self.instance = instance
        self.eta = eta
        self.latest: dict[int, tuple[int, BlockId]] = {}
        self.first: dict[tuple[int, int], BlockId] = {}
        self.equivocators: set[int] = set()
        self.senders: set[int] = set()

    def in_window(self, instance: int) -> bool:
        if instance > self.instance:
            return False
        if self.eta is None:
            return instance == self.instance
        return instance > self.instance - self.eta

    def add(self, sender: int, instance: int, log: BlockId) -> bool:
        """Record a message; returns False when it falls outside the window."""
        if not self.in_window(instance):
            return False
        key = (sender, instance)
        prev = self.first.get(key)
        if prev is None:
            self.first[key] = log
            cur = self.latest.get(sender)
            if cur is None or cur[0] < instance:
                self.latest[sender] = (instance, log)
        elif prev != log:
            self.equivocators.add(sender)
        self.senders.add(sender)
        return True

    def add_message(self, msg: GAMessage) -> bool:
        return self.add(msg.sender, msg.instance, msg.log)

    @property
    def participation(self) -> int:
        return len(self.senders)

    def snapshot(self) -> dict[int, BlockId]:
        return {s: log for s, (_, log) in self.latest.items()}

    def current(self) -> dict[int, BlockId]:
        return {s: log for s, (_, log) in self.latest.items() if s not in self.equivocators}

    def support(self, tree: BlockTree, stored: Optional[Mapping[int, BlockId]] = None):
        """Per-block supporter counts, optionally restricted to a stored snapshot.

        With ``stored`` a sender supports Λ only if both its stored log and its
        current log extend Λ, i.e. it supports the common prefix of the two.
        Returns ``(root, counts)`` as :meth:`BlockTree.weights`.
        """
        live = self.current()
        if stored is None:
            return tree.weights(live.values())
        tips = []
        for s, old in stored.items():
            now = live.get(s)
            if now is None:
                continue
            if now == old:
                tips.append(now)
            elif now in tree and old in tree:
                tips.append(tree.common_ancestor((now, old)))
        return tree.weights(tips)

    def over_half(self, tree: BlockTree, stored: Optional[Mapping[int, BlockId]] = None) -> list[BlockId]:
        """Blocks supported by more than half of the current participation."""
        part = self.participation
        _, counts = self.support(tree, stored)
        return [b for b, c in counts.items() if 2 * c > part]


class GAInstance:
    """One validator's view of one graded-agreement run."""

    grades = 0

    def __init__(self, config: GAConfig, owner: int, index: int = 0,
                 tree: Optional[BlockTree] = None):
        self.config = config
        self.owner = owner
        self.index = index
        self.tree = tree if tree is not None else BlockTree()
        self.tally = Tally(index, config.eta)
        self.stored: dict[str, dict[int, BlockId]] = {}
        self.outputs: list[GradedOutput] = []
        self.own_inputs: dict[int, BlockId] = {}
        self._last_tick = -1

    def input(self, log: BlockId, sender: Optional[int] = None, t: int = 0) -> GAMessage:
        sender = self.owner if sender is None else sender
        if t != 0:
            raise LateInput(f"input at local time {t}")
        prev = self.own_inputs.get(sender)
        if prev is not None:
            if prev != log:
                self.tally.equivocators.add(sender)
                self.tally.senders.add(sender)
            raise DuplicateInput(f"validator {sender} already input to instance {self.index}")
        self.own_inputs[sender] = log
        return GAMessage(sender, self.index, log, t)

    def receive(self, msg: GAMessage) -> bool:
        return self.tally.add_message(msg)

    @property
    def equivocators(self) -> set[int]:
        return self.tally.equivocators

    def _emit(self, grade: int, t: int, stored=None) -> list[GradedOutput]:
        logs = self.tally.over_half(self.tree, stored)
        logs.sort(key=lambda b: (self.tree[b].slot, b))
        out = [GradedOutput(b, grade, t) for b in logs]
        self.outputs.extend(out)
        return out

    def tick(self, t: int) -> list[GradedOutput]:
        if t <= self._last_tick:
            raise ValueError("ticks must be strictly increasing")
        self._last_tick = t
        return self._step(t)

    def _step(self, t: int) -> list[GradedOutput]:
        raise NotImplementedError

    def highest_output(self, grade: int) -> Optional[BlockId]:
        return highest((o.log for o in self.outputs if o.grade == grade), self.tree)


class ThreeGradeGA(GAInstance):
    grades = 3

    def _step(self, t):
        d = self.config.delta
        if t == d:
            self.stored["delta"] = self.tally.snapshot()
        elif t == 2 * d:
            self.stored["2delta"] = self.tally.snapshot()
        elif t == 3 * d:
            return self._emit(0, t)
        elif t == 4 * d:
            return self._emit(1, t, self.stored.get("2delta", {}))
        elif t == 5 * d:
            return self._emit(2, t, self.stored.get("delta", {}))
        return []


class TwoGradeGA(GAInstance):
    grades = 2

    def _step(self, t):
        d = self.config.delta
        if t == d:
            self.stored["delta"] = self.tally.snapshot()
        elif t == 2 * d:
            return self._emit(0, t)
        elif t == 3 * d:
            return self._emit(1, t, self.stored.get("delta", {}))
        return []


def make_instance(config: GAConfig, owner: int, index: int = 0,
                  tree: Optional[BlockTree] = None) -> GAInstance:
    cls = ThreeGradeGA if config.grades == 3 else TwoGradeGA
    return cls(config, owner, index, tree)


def ga3_input(instance: GAInstance, log: BlockId, sender: int, t: int = 0) -> GAMessage:
    return instance.input(log, sender, t)


def ga3_tick(instance: GAInstance, t: int) -> list[GradedOutput]:
    return instance.tick(t)


ga2_input = ga3_input
ga2_tick = ga3_tick
