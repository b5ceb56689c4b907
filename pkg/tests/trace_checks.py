"""Checks over raw traces, independent of :func:`ssf_lab.netsim.evaluate`."""

from ssf_lab.core import Block, BlockTree

SEND_KINDS = {"propose", "block", "head-vote", "ga-input", "ffg-vote", "ack"}


def delivery_violations(trace, sleep=None):
    """Deliveries later than max(sent, gst) + delta to an awake recipient.

    Relayed recipients (not addressed by the sender) are bounded by the
    first delivery of the same message instead of the send tick.
    """
    events = trace.events
    head = events[0]
    gst, delta = head["gst"], head["delta"]
    sent = {}
    first = {}
    bad = []
    for ev in events:
        k = ev["kind"]
        if k in SEND_KINDS and "msg" in ev:
            sent[ev["msg"]] = ev["t"]
        elif k == "deliver":
            mid, t = ev["msg"], ev["t"]
            relayed = set(ev.get("relayed", ()))
            origin = first.setdefault(mid, t)
            for r in ev["to"]:
                base = origin if r in relayed else sent[mid]
                bound = max(base, gst) + delta
                if t > bound and not (sleep is not None and _slept(sleep, r, bound, t)):
                    bad.append((mid, r, t, bound))
    return bad


def _slept(sleep, r, lo, hi):
    return any(sleep.asleep(r, x) for x in range(lo, hi))


def tree_of(trace):
    tree = BlockTree()
    for ev in trace.events:
        if ev["kind"] in ("propose", "block"):
            tree.insert(Block.from_json(ev["block"]))
    return tree


def justified_conflicts(trace):
    """Pairs of honestly justified checkpoints on different branches."""
    tree = tree_of(trace)
    blocks = sorted({bytes.fromhex(ev["checkpoint"][0]) for ev in trace.of_kind("justify")},
                    key=lambda b: (tree.height[b], b))
    out = []
    for i, a in enumerate(blocks):
        for b in blocks[i + 1:]:
            if not tree.is_prefix(a, b):
                out.append((a, b))
    return out


def honest_offenses(trace):
    return [e for e in trace.of_kind("offense") if e["honest"]]
