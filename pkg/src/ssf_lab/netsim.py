"""Deterministic discrete-event network simulator and trace evaluation.

Time is integer ticks. Each tick first delivers every message due at that
tick, then runs round actions (honest validators in id order, then the
adversary, which sees everything honest validators sent at that tick).

Delivery model:

* a message sent at ``t >= gst`` reaches every recipient at ``t + Δ``;
* before GST the adversary holds messages back until ``gst + Δ``; under
  SPLIT_VIEW only cross-group messages are held, messages inside a group
  still take Δ;
* an honest validator that receives a message relays it, so every other
  recipient gets it at most Δ after the first honest delivery;
* asleep recipients receive their queue on waking.
"""

from __future__ import annotations

import enum
import io
import json
import logging
import zlib
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Any, Iterable, Optional

import numpy as np

from .core import Block, BlockId, BlockTree, GENESIS
from .ffg import Ack, FFGVote, JustificationState, detect_slashable, record_ack
from .graded_agreement import GAMessage
from .tob import BlockAnnounce, HeadVote, Proposal, ValidatorState, Variant

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid experiment configuration; ``field`` names the offending key."""

    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


@dataclass(frozen=True)
class NetworkConfig:
    n: int
    delta: int = 1
    gst: int = 0
    seed: int = 0
    kappa: int = 6
    eta: Optional[int] = None
    leaders: str = "round-robin"

    def __post_init__(self):
        if not isinstance(self.n, int) or self.n < 1:
            raise ConfigError("n", "must be a positive integer")
        if not isinstance(self.delta, int) or self.delta < 1:
            raise ConfigError("delta", "must be an integer >= 1")
        if not isinstance(self.gst, int) or self.gst < 0:
            raise ConfigError("gst", "must be an integer >= 0")
        if not isinstance(self.kappa, int) or self.kappa < 1:
            raise ConfigError("kappa", "must be an integer >= 1")
        if self.eta is not None and (not isinstance(self.eta, int) or self.eta < 1):
            raise ConfigError("eta", "must be null or an integer >= 1")
        if self.leaders not in ("round-robin", "random"):
            raise ConfigError("leaders", "must be 'round-robin' or 'random'")


class AdversaryKind(str, enum.Enum):
    NONE = "none"
    EQUIVOCATE = "equivocate"
    WITHHOLD_REVEAL = "withhold_reveal"
    SPLIT_VIEW = "split_view"
    CRASH_LEADER = "crash_leader"


@dataclass(frozen=True)
class AdversaryPolicy:
    kind: AdversaryKind = AdversaryKind.NONE
    validators: frozenset = frozenset()
    reveal_delay: Optional[int] = None
    partition: Optional[tuple] = None

    @classmethod
    def with_fraction(cls, kind, beta: float, n: int, **kw) -> "AdversaryPolicy":
        """Adversary set = the ``floor(beta * n)`` highest ids."""
        k = int(np.floor(beta * n + 1e-9))
        return cls(AdversaryKind(kind), frozenset(range(n - k, n)), **kw)

    def group_of(self, n: int) -> list[int]:
        groups = self.partition
        if groups is None:
            groups = (tuple(range(n // 2)), tuple(range(n // 2, n)))
        out = [-1] * n
        for g, members in enumerate(groups):
            for v in members:
                out[v] = g
        return out


@dataclass
class SleepSchedule:
    intervals: dict = field(default_factory=dict)  # validator -> [(sleep_at, wake_at)]

    def __post_init__(self):
        for v, iv in self.intervals.items():
            last = -1
            for a, b in iv:
                if a < last or b is not None and b <= a:
                    raise ConfigError(f"sleep.{v}", "intervals must be ordered and disjoint")
                last = b if b is not None else float("inf")

    def asleep(self, v: int, t: int) -> bool:
        for a, b in self.intervals.get(v, ()):
            if a <= t and (b is None or t < b):
                return True
        return False

    def next_awake(self, v: int, t: int) -> Optional[int]:
        """First tick >= ``t`` at which ``v`` is awake; None if never."""
        for a, b in self.intervals.get(v, ()):
            if a <= t and (b is None or t < b):
                return b
        return t


@dataclass
class Trace:
    events: list = field(default_factory=list)

    def add(self, **ev):
        self.events.append(ev)

    def lines(self) -> Iterable[str]:
        for ev in self.events:
            yield json.dumps(ev, sort_keys=True, separators=(",", ":"))

    def to_jsonl(self) -> str:
        buf = io.StringIO()
        for line in self.lines():
            buf.write(line)
            buf.write("\n")
        return buf.getvalue()

    def write(self, path):
        with open(path, "w") as fh:
            for line in self.lines():
                fh.write(line)
                fh.write("\n")

    @classmethod
    def read(cls, path) -> "Trace":
        with open(path) as fh:
            return cls([json.loads(line) for line in fh if line.strip()])

    def of_kind(self, *kinds):
        return [e for e in self.events if e["kind"] in kinds]


def keyed_rng(seed: int, component: str, validator: int = 0, tick: int = 0) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(
        [seed & 0xFFFFFFFFFFFFFFFF, zlib.crc32(component.encode()), validator + 1, tick]))


def leader_schedule(cfg: NetworkConfig):
    if cfg.leaders == "random":
        cache: dict[int, int] = {}

        def leader(slot: int) -> int:
            if slot not in cache:
                cache[slot] = int(keyed_rng(cfg.seed, "leader", 0, slot).integers(cfg.n))
            return cache[slot]
        return leader
    order = [int(x) for x in keyed_rng(cfg.seed, "leader-order").permutation(cfg.n)]

    def leader(slot: int) -> int:
        return order[(slot - 1) % cfg.n]
    return leader


def schedule_delivery(msg, sent_at: int, recipient: int, config: NetworkConfig,
                      policy: AdversaryPolicy = AdversaryPolicy(), sender: Optional[int] = None,
                      sleep: Optional[SleepSchedule] = None, groups: Optional[list] = None) -> Optional[int]:
    """Delivery tick for one recipient; None when the recipient never wakes."""
    d = config.delta
    if sent_at >= config.gst:
        at = sent_at + d
    elif policy.kind is AdversaryKind.SPLIT_VIEW:
        groups = groups if groups is not None else policy.group_of(config.n)
        same = sender is not None and groups[sender] == groups[recipient]
        at = sent_at + d if same else config.gst + d
    else:
        at = config.gst + d
    if sleep is not None:
        return sleep.next_awake(recipient, at)
    return at


def msg_fields(msg) -> dict:
    if isinstance(msg, Proposal):
        out = {"slot": msg.slot, "block": msg.block.to_json(), "b_c": msg.b_C.hex()}
        if msg.Q_C is not None:
            out["qc"] = msg.Q_C.to_json()
        if msg.LJ is not None:
            out["lj"] = msg.LJ.to_json()
        return out
    if isinstance(msg, HeadVote):
        return {"slot": msg.slot, "block": msg.block.hex()}
    if isinstance(msg, BlockAnnounce):
        return {"block": msg.block.to_json()}
    if isinstance(msg, GAMessage):
        return {"instance": msg.instance, "log": msg.log.hex()}
    if isinstance(msg, FFGVote):
        return {"source": msg.source.to_json(), "target": msg.target.to_json(), "cast": msg.cast_at_slot}
    if isinstance(msg, Ack):
        return {"target": msg.target.to_json()}
    raise TypeError(type(msg))


class _Envelope:
    __slots__ = ("msg", "sender", "sent_at", "scheduled", "delivered", "direct", "relayed_groups", "left")

    def __init__(self, msg, sender, sent_at, n):
        self.msg = msg
        self.sender = sender
        self.sent_at = sent_at
        self.scheduled: list = [None] * n
        self.delivered = bytearray(n)
        self.direct = bytearray(n)
        self.relayed_groups: set = set()
        self.left = 0


class Simulation:
    """One run of one scenario; see :func:`run`."""

    def __init__(self, variant, network: NetworkConfig, slots: int,
                 adversary: AdversaryPolicy = AdversaryPolicy(),
                 sleep: Optional[SleepSchedule] = None, stakes: Optional[dict] = None,
                 name: str = "scenario"):
        self.variant = Variant(variant)
        self.cfg = network
        self.slots = slots
        self.policy = adversary
        self.sleep = sleep if sleep and sleep.intervals else None
        n = network.n
        self.stakes = stakes if stakes is not None else {i: 32 for i in range(n)}
        self.name = name
        self.leader = leader_schedule(network)
        self.adv = frozenset(adversary.validators)
        self.honest = [i for i in range(n) if i not in self.adv]
        self.groups = adversary.group_of(n) if adversary.kind is AdversaryKind.SPLIT_VIEW else [0] * n
        self.validators = [ValidatorState(i, self.variant, n, self.leader, network.delta, network.eta,
                                          network.kappa, self.stakes) for i in range(n)]
        self.trace = Trace()
        self.buckets: dict[int, list] = defaultdict(list)
        self.envelopes: dict[int, _Envelope] = {}
        self.next_id = 0
        self.released: dict[int, list] = defaultdict(list)
        self.observer = JustificationState(self.stakes)
        self.slot_ticks = self.variant.rounds * network.delta
        # honest id order, split into two halves for targeted equivocation
        self._half_a = frozenset(self.honest[0::2])
        self._half_b = frozenset(self.honest[1::2])

    # -- messaging -------------------------------------------------------

    def broadcast(self, sender: int, msg, t: int, recipients: Optional[Iterable[int]] = None):
        mid = self.next_id
        self.next_id += 1
        n = self.cfg.n
        env = _Envelope(msg, sender, t, n)
        self.envelopes[mid] = env
        targets = range(n) if recipients is None else sorted(recipients)
        ev = {"t": t, "kind": msg.kind, "v": sender, "msg": mid}
        ev.update(msg_fields(msg))
        if recipients is not None:
            ev["to"] = list(targets)
        self.trace.add(**ev)
        for r in targets:
            at = schedule_delivery(msg, t, r, self.cfg, self.policy, sender, self.sleep, self.groups)
            env.direct[r] = 1
            if at is None:
                continue
            env.scheduled[r] = at
            env.left += 1
            self.buckets[at].append((r, mid))
        self._observe(msg, t)
        return mid

    def _observe(self, msg, t):
        if isinstance(msg, FFGVote):
            offs = detect_slashable(self.observer, msg)
            self.observer.log_vote(msg)
        elif isinstance(msg, Ack):
            offs = detect_slashable(self.observer, msg)
            record_ack(self.observer, msg)
        else:
            return
        for o in offs:
            self.trace.add(t=t, kind="offense", v=o.offender, offense=o.kind,
                           honest=o.offender not in self.adv)

    def _deliver(self, t: int):
        due = self.buckets.pop(t, None)
        if not due:
            return
        groups: dict[int, list] = {}
        relayed: dict[int, list] = {}
        order: list[int] = []
        for r, mid in due:
            env = self.envelopes.get(mid)
            if env is None or env.delivered[r] or env.scheduled[r] != t:
                continue
            if self.sleep is not None and self.sleep.asleep(r, t):
                at = self.sleep.next_awake(r, t)
                env.scheduled[r] = at
                if at is None:
                    env.left -= 1
                else:
                    self.buckets[at].append((r, mid))
                continue
            env.delivered[r] = 1
            env.left -= 1
            if mid not in groups:
                groups[mid] = []
                order.append(mid)
            groups[mid].append(r)
            if not env.direct[r]:
                relayed.setdefault(mid, []).append(r)
            self.validators[r].receive(env.msg, t)
            if r not in self.adv and self.groups[r] not in env.relayed_groups:
                self._relay(mid, env, r, t)
            if env.left <= 0:
                del self.envelopes[mid]
        for mid in order:
            ev = {"t": t, "kind": "deliver", "msg": mid, "to": groups[mid]}
            if mid in relayed:
                ev["relayed"] = relayed[mid]
            self.trace.add(**ev)

    def _relay(self, mid: int, env: _Envelope, r: int, t: int):
        g = self.groups[r]
        if g in env.relayed_groups:
            return
        env.relayed_groups.add(g)
        cfg = self.cfg
        for q in range(cfg.n):
            if env.delivered[q] or q == r:
                continue
            at = schedule_delivery(env.msg, t, q, cfg, self.policy, r, self.sleep, self.groups)
            cur = env.scheduled[q]
            if at is None or (cur is not None and cur <= at):
                continue
            if cur is None:
                env.left += 1
            env.scheduled[q] = at
            self.buckets[at].append((q, mid))

    # -- adversary -------------------------------------------------------

    def adversary_act(self, sender: int, msgs: list, t: int):
        """Transform one adversary validator's honest-logic output at tick ``t``."""
        kind = self.policy.kind
        if kind is AdversaryKind.CRASH_LEADER:
            msgs = [m for m in msgs if not isinstance(m, Proposal)]
        if kind is AdversaryKind.EQUIVOCATE:
            for m in msgs:
                if isinstance(m, (HeadVote, GAMessage)):
                    self._equivocate(sender, m, t)
                else:
                    self.broadcast(sender, m, t)
            return
        if kind is AdversaryKind.WITHHOLD_REVEAL:
            delay = self.policy.reveal_delay
            if delay is None:
                delay = self.slot_ticks
            for m in msgs:
                self.broadcast(sender, m, t, self.adv)
                self.released[t + delay].append((sender, m))
            return
        for m in msgs:
            self.broadcast(sender, m, t)

    def _equivocate(self, sender: int, m, t: int):
        state = self.validators[sender]
        real = m.block if isinstance(m, HeadVote) else m.log
        blk = state.tree[real]
        slot = max(state.slot, 1)
        if blk.parent is None:
            fake = Block.make(GENESIS.id, slot, sender, b"equivocation")
        else:
            fake = Block.make(blk.parent, blk.slot, sender, b"equivocation")
        other = (HeadVote(sender, m.slot, fake.id) if isinstance(m, HeadVote)
                 else GAMessage(sender, m.instance, fake.id, m.sent_at))
        side_a = self._half_a | self.adv
        self.broadcast(sender, BlockAnnounce(sender, fake), t, self._half_b)
        self.broadcast(sender, m, t, side_a)
        self.broadcast(sender, other, t, self._half_b)

    # -- main loop -------------------------------------------------------

    def _drain(self, v: int, t: int):
        st = self.validators[v]
        if not st.events:
            return
        if v in self.adv:
            st.events.clear()
            return
        for kind, fields in st.events:
            ev = {"t": t, "kind": kind, "v": v}
            ev.update(fields)
            self.trace.add(**ev)
        st.events.clear()

    def run(self) -> Trace:
        cfg = self.cfg
        self.trace.add(t=0, kind="scenario", name=self.name, variant=self.variant.value, n=cfg.n,
                       delta=cfg.delta, gst=cfg.gst, seed=cfg.seed, kappa=cfg.kappa, eta=cfg.eta,
                       slots=self.slots, rounds=self.variant.rounds,
                       adversary=self.policy.kind.value, adversaries=sorted(self.adv),
                       stakes=[self.stakes[i] for i in range(cfg.n)])
        end = self.slots * self.slot_ticks
        n = cfg.n
        for t in range(end + 1):
            self._deliver(t)
            for v in range(n):
                self._drain(v, t)
            for sender, m in self.released.pop(t, ()):
                self.broadcast(sender, m, t, [i for i in range(n) if i not in self.adv])
            if t == end or t % cfg.delta:
                continue
            slot = t // self.slot_ticks + 1
            r = (t // cfg.delta) % self.variant.rounds
            for v in self.honest:
                if self.sleep is not None and self.sleep.asleep(v, t):
                    continue
                for m in self.validators[v].on_round(slot, r, t):
                    self.broadcast(v, m, t)
                self._drain(v, t)
            for v in sorted(self.adv):
                if self.sleep is not None and self.sleep.asleep(v, t):
                    continue
                out = self.validators[v].on_round(slot, r, t)
                self.adversary_act(v, out, t)
                self._drain(v, t)
        return self.trace


def run(scenario) -> Trace:
    """Run a scenario object (see :class:`ssf_lab.harness.Scenario`)."""
    sim = Simulation(scenario.variant, scenario.network, scenario.slots, scenario.adversary,
                     scenario.sleep, scenario.stakes, scenario.name)
    return sim.run()


def adversary_act(sim: Simulation, sender: int, msgs: list, t: int):
    return sim.adversary_act(sender, msgs, t)


# -- evaluation --------------------------------------------------------------

BLOCK_COLUMNS = ["block", "slot", "proposer", "honest_proposer", "parent", "slot_confirmed",
                 "slot_decided", "slot_justified", "slot_justified_all", "slot_finalized",
                 "slot_ssf_finalized", "reorged"]


@dataclass
class Metrics:
    blocks: list = field(default_factory=list)  # rows keyed by BLOCK_COLUMNS
    counts: dict = field(default_factory=dict)
    latencies: dict = field(default_factory=dict)
    rounds: int = 0
    variant: str = ""

    @property
    def safety_violations(self) -> int:
        c = self.counts
        return (c.get("conflicting_finalized", 0) + c.get("conflicting_ssf_finalized", 0)
                + c.get("conflicting_decided", 0) + c.get("conflicting_grade1", 0))

    def histogram(self, name: str) -> dict:
        h: dict[int, int] = {}
        for x in self.latencies.get(name, ()):
            h[x] = h.get(x, 0) + 1
        return dict(sorted(h.items()))

    def blocks_csv(self) -> str:
        import csv
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(BLOCK_COLUMNS)
        for row in self.blocks:
            w.writerow(["" if row[c] is None else row[c] for c in BLOCK_COLUMNS])
        return buf.getvalue()


def _off_chain(tree: BlockTree, ids: Iterable[BlockId]) -> int:
    """How many of ``ids`` are not on the chain of the highest one."""
    ids = [b for b in set(ids) if b in tree]
    if len(ids) < 2:
        return 0
    top = max(ids, key=lambda b: (tree.height[b], b))
    chain = set(tree.chain(top))
    return sum(1 for b in ids if b not in chain)


def evaluate(trace: Trace) -> Metrics:
    events = trace.events if isinstance(trace, Trace) else trace
    head = events[0]
    n, rounds, delta = head["n"], head["rounds"], head["delta"]
    slot_ticks = rounds * delta
    adv = set(head["adversaries"])
    honest = [i for i in range(n) if i not in adv]
    stakes = head["stakes"]
    total = sum(stakes)

    def slot_of(t):
        return t // slot_ticks + 1

    tree = BlockTree()
    proposals: dict[BlockId, dict] = {}
    heads: dict[int, list] = defaultdict(list)
    confirmed: dict[BlockId, int] = {}
    decided: dict[BlockId, int] = {}
    justified: dict[BlockId, int] = {}
    justified_by: dict[BlockId, dict] = defaultdict(dict)
    finalized: dict[BlockId, int] = {}
    ssf_cps: set = set()
    finalized_cps: set = set()
    decided_tips: set = set()
    grade1: dict[int, set] = defaultdict(set)
    acks: dict[tuple, list] = defaultdict(list)
    counts = defaultdict(int)

    def mark_chain(store, tip, slot):
        cur = tip
        while cur is not None and cur not in store and cur in tree:
            store[cur] = slot
            cur = tree[cur].parent

    for ev in events:
        k = ev["kind"]
        v = ev.get("v")
        if k == "propose" or k == "block":
            b = Block.from_json(ev["block"])
            tree.insert(b)
            if k == "propose":
                counts["messages"] += 1
                proposals[b.id] = {"slot": ev["slot"], "proposer": v, "honest": v not in adv}
            else:
                counts["messages"] += 1
        elif k in ("head-vote", "ga-input"):
            counts["messages"] += 1
            if v not in adv:
                slot = ev.get("slot", ev.get("instance"))
                heads[slot].append(bytes.fromhex(ev.get("block") or ev.get("log")))
        elif k in ("ffg-vote",):
            counts["messages"] += 1
        elif k == "ack":
            counts["messages"] += 1
            acks[tuple(ev["target"])].append((ev["t"], v))
        elif v is None or v in adv:
            if k == "offense":
                counts["offenses"] += 1
                if ev["honest"]:
                    counts["honest_offenses"] += 1
            continue
        elif k == "confirm":
            mark_chain(confirmed, bytes.fromhex(ev["block"]), slot_of(ev["t"]))
        elif k == "decide":
            b = bytes.fromhex(ev["block"])
            decided_tips.add(b)
            mark_chain(decided, b, slot_of(ev["t"]))
        elif k == "justify":
            b = bytes.fromhex(ev["checkpoint"][0])
            s = slot_of(ev["t"])
            justified.setdefault(b, s)
            justified_by[b].setdefault(v, s)
        elif k == "finalize":
            b = bytes.fromhex(ev["checkpoint"][0])
            finalized.setdefault(b, slot_of(ev["t"]))
            finalized_cps.add(b)
        elif k == "ssf-finalize":
            ssf_cps.add(tuple(ev["checkpoint"]))
        elif k == "ga-output" and ev["grade"] >= 1:
            grade1[ev["instance"]].add(bytes.fromhex(ev["log"]))
        elif k in ("decide-conflict", "confirm-conflict"):
            counts[k.replace("-", "_") + "s"] += 1

    # ssf-finalization is credited to the slot whose acks first reach 2/3 of stake
    ssf_slot: dict[BlockId, int] = {}
    for cp in sorted(ssf_cps):
        w = 0
        for t, sender in sorted(acks.get(cp, ())):
            w += stakes[sender]
            if 3 * w >= 2 * total:
                b = bytes.fromhex(cp[0])
                s = slot_of(t)
                if b not in ssf_slot or s < ssf_slot[b]:
                    ssf_slot[b] = s
                break

    counts["conflicting_finalized"] = _off_chain(tree, finalized_cps)
    counts["conflicting_ssf_finalized"] = _off_chain(tree, (bytes.fromhex(c[0]) for c in ssf_cps))
    counts["conflicting_decided"] = _off_chain(tree, decided_tips) + counts.get("decide_conflicts", 0)
    counts["conflicting_grade1"] = sum(_off_chain(tree, logs) for logs in grade1.values())

    # suffix common ancestor of all honest heads from slot s on
    later: dict[int, Optional[BlockId]] = {}
    acc = None
    for s in sorted(heads, reverse=True):
        known = [h for h in heads[s] if h in tree]
        if acc is not None:
            known.append(acc)
        acc = tree.common_ancestor(known) if known else acc
        later[s] = acc
    suffix_slots = sorted(later)

    def lca_after(p):
        import bisect
        k = bisect.bisect_right(suffix_slots, p)
        return later[suffix_slots[k]] if k < len(suffix_slots) else None

    rows = []
    lat = defaultdict(list)
    for b, info in sorted(proposals.items(), key=lambda kv: (kv[1]["slot"], kv[0])):
        if b not in tree:
            continue
        s = info["slot"]
        reorged = None
        if info["honest"]:
            counts["honest_proposals"] += 1
            c = lca_after(s)
            if c is not None:
                reorged = not tree.is_prefix(b, c)
                counts["reorgs"] += int(reorged)
        jb = justified_by.get(b, {})
        j_all = max(jb.values()) if jb and all(h in jb for h in honest) else None
        row = {"block": b.hex(), "slot": s, "proposer": info["proposer"],
               "honest_proposer": int(info["honest"]), "parent": tree[b].parent.hex(),
               "slot_confirmed": confirmed.get(b), "slot_decided": decided.get(b),
               "slot_justified": justified.get(b), "slot_justified_all": j_all,
               "slot_finalized": finalized.get(b), "slot_ssf_finalized": ssf_slot.get(b),
               "reorged": "" if reorged is None else int(reorged)}
        rows.append(row)
        for name, col in (("confirm", "slot_confirmed"), ("decide", "slot_decided"),
                          ("justify", "slot_justified"), ("finalize", "slot_finalized"),
                          ("ssf_finalize", "slot_ssf_finalized")):
            if row[col] is not None:
                lat[name].append(row[col] - s)
    counts["blocks"] = len(rows)
    slots = head["slots"]
    counts["msgs_per_slot_per_validator"] = counts["messages"] / (slots * n)
    return Metrics(rows, dict(counts), dict(lat), rounds, head["variant"])
