"""Delivery-schedule drivers for the graded-agreement property suite.

A schedule fixes, for every message, the tick at which each honest
participant receives it. Gossip is modelled by closing every schedule under
relaying: once an honest participant holds a message, every other honest
participant holds it at most Δ later.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterator, Optional

import numpy as np

from .core import Block, BlockId, BlockTree, GENESIS
from .graded_agreement import GAConfig, GAMessage, GradedOutput, make_instance


def fixture_tree() -> tuple[BlockTree, dict[str, BlockId]]:
    """g -> A -> B and the conflicting sibling g -> A'."""
    tree = BlockTree()
    a = Block.make(GENESIS.id, 1, 0, b"A")
    a2 = Block.make(GENESIS.id, 1, 1, b"A'")
    b = Block.make(a.id, 2, 0, b"B")
    for blk in (a, a2, b):
        tree.insert(blk)
    return tree, {"g": GENESIS.id, "A": a.id, "A'": a2.id, "B": b.id}


@dataclass
class Schedule:
    grades: int
    delta: int
    n: int
    inputs: dict[int, BlockId]
    # (sender, log, {honest recipient: delivery tick})
    deliveries: list[tuple[int, BlockId, dict[int, int]]] = field(default_factory=list)

    @property
    def honest(self) -> list[int]:
        return sorted(self.inputs)

    @property
    def adversaries(self) -> list[int]:
        return [i for i in range(self.n) if i not in self.inputs]

    def key(self):
        return (tuple(sorted(self.inputs.items())),
                tuple(sorted((s, l, tuple(sorted(d.items()))) for s, l, d in self.deliveries)))


def relay_closure(times: dict[int, int], honest: list[int], delta: int) -> dict[int, int]:
    if not times:
        return {}
    first = min(times.values())
    bound = first + delta
    out = {}
    for r in honest:
        t = times.get(r)
        out[r] = bound if t is None or t > bound else t
    return out


def run_schedule(schedule: Schedule, tree: BlockTree) -> dict[int, list[GradedOutput]]:
    cfg = GAConfig(grades=schedule.grades, delta=schedule.delta)
    honest = schedule.honest
    insts = {p: make_instance(cfg, p, 0, tree) for p in honest}
    for p in honest:
        insts[p].input(schedule.inputs[p])
    by_tick: dict[int, list[tuple[int, GAMessage]]] = {}
    for sender, log, times in schedule.deliveries:
        msg = GAMessage(sender, 0, log)
        for r, t in times.items():
            by_tick.setdefault(t, []).append((r, msg))
    for t in range(cfg.duration + 1):
        for r, msg in by_tick.get(t, ()):
            insts[r].receive(msg)
        for p in honest:
            insts[p].tick(t)
    return {p: insts[p].outputs for p in honest}


def _closure_outputs(outputs: list[GradedOutput]) -> dict[int, list[BlockId]]:
    by_grade: dict[int, list[BlockId]] = {}
    for o in outputs:
        by_grade.setdefault(o.grade, []).append(o.log)
    return by_grade


def check_properties(schedule: Schedule, outputs: dict[int, list[GradedOutput]],
                     tree: BlockTree) -> list[str]:
    """Return a description of every GA property violated by one run."""
    bad = []
    top = schedule.grades - 1
    honest = schedule.honest
    graded = {p: _closure_outputs(outputs[p]) for p in honest}

    def conflicts(x, y):
        return not (tree.is_prefix(x, y) or tree.is_prefix(y, x))

    def outputs_at_least(p, log, grade):
        return any(tree.is_prefix(log, l) for l in graded[p].get(grade, ()))

    for p in honest:
        for g, logs in graded[p].items():
            for x, y in itertools.combinations(logs, 2):
                if conflicts(x, y):
                    bad.append(f"uniqueness: p{p} grade {g} outputs conflicting logs")
    high = [(p, g, l) for p in honest for g, logs in graded[p].items() if g >= 1 for l in logs]
    every = [(p, g, l) for p in honest for g, logs in graded[p].items() for l in logs]
    for (p, g, x) in high:
        for (q, h, y) in every:
            if conflicts(x, y):
                kind = "uniqueness" if h >= 1 else "consistency"
                bad.append(f"{kind}: p{p} ({g}) vs p{q} ({h}) conflict")
        for q in honest:
            if not outputs_at_least(q, x, g - 1):
                bad.append(f"graded delivery: p{p} grade {g} but p{q} lacks grade {g - 1}")
    inputs = [schedule.inputs[p] for p in honest]
    for (p, g, x) in every:
        if not any(tree.is_prefix(x, i) for i in inputs):
            bad.append(f"integrity: p{p} output grade {g} not a prefix of an honest input")
    if len(schedule.adversaries) < len(honest):
        common = tree.common_ancestor(inputs)
        for p in honest:
            if not outputs_at_least(p, common, top):
                bad.append(f"validity: p{p} lacks top grade for common input prefix")
    return bad


def enumerate_schedules(grades: int, n: int, delta: int = 1,
                        adversary_logs=("A", "A'")) -> Iterator[Schedule]:
    """Every schedule with one equivocating adversary (the last id).

    Honest inputs range over multisets of {A, A', B}; the adversary may send
    any of ``adversary_logs`` to each honest participant at any tick before
    the last output round. Honest messages take exactly Δ. Duplicate schedules after relay
    closure are skipped.
    """
    tree, ids = fixture_tree()
    logs = [ids["A"], ids["A'"], ids["B"]]
    honest = list(range(n - 1))
    adv = n - 1
    last = (5 if grades == 3 else 3) * delta
    ticks = [None] + list(range(last))
    seen = set()
    adv_logs = [ids[k] for k in adversary_logs]
    per_recipient = list(itertools.product(ticks, repeat=len(adv_logs)))
    for combo in itertools.combinations_with_replacement(logs, len(honest)):
        inputs = dict(zip(honest, combo))
        base = [(p, inputs[p], {r: delta for r in honest}) for p in honest]
        for choice in itertools.product(per_recipient, repeat=len(honest)):
            extra = []
            for k, adv_log in enumerate(adv_logs):
                raw = {r: choice[i][k] + delta for i, r in enumerate(honest) if choice[i][k] is not None}
                if raw:
                    extra.append((adv, adv_log, relay_closure(raw, honest, delta)))
            sched = Schedule(grades, delta, n, inputs, base + extra)
            key = sched.key()
            if key in seen:
                continue
            seen.add(key)
            yield sched


def random_schedule(rng: np.random.Generator, grades: int, n: int,
                    max_adversaries: Optional[int] = None, tree_ids=None) -> Schedule:
    """A random schedule with fewer than n/2 adversaries and Δ in 1..3."""
    if tree_ids is None:
        _, tree_ids = fixture_tree()
    logs = [tree_ids[k] for k in ("A", "A'", "B")]
    delta = int(rng.integers(1, 4))
    cap = (n - 1) // 2 if max_adversaries is None else max_adversaries
    a = int(rng.integers(0, cap + 1))
    adv = set(int(x) for x in rng.choice(n, size=a, replace=False))
    honest = [i for i in range(n) if i not in adv]
    # honest inputs cluster on one or two logs
    pool = [logs[int(i)] for i in rng.choice(3, size=int(rng.integers(1, 3)), replace=False)]
    inputs = {p: pool[int(rng.integers(0, len(pool)))] for p in honest}
    deliveries = []
    for p in honest:
        times = {r: int(rng.integers(1, delta + 1)) for r in honest}
        deliveries.append((p, inputs[p], times))
    last = (5 if grades == 3 else 3) * delta
    for q in sorted(adv):
        for log in logs:
            if rng.random() < 0.5:
                continue
            raw = {}
            for r in honest:
                if rng.random() < 0.5:
                    raw[r] = int(rng.integers(0, last)) + int(rng.integers(1, delta + 1))
            if raw:
                deliveries.append((q, log, relay_closure(raw, honest, delta)))
    return Schedule(grades, delta, n, inputs, deliveries)
