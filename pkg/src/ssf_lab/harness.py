"""Scenario files, multi-seed experiments, reports and the ``ssf-lab`` CLI.

Scenario files are JSON objects with these keys (defaults in brackets)::

    name         str                       [file stem]
    variant      baseline_4d | prob_3d | fastconfirm | ssf | streamlined
    n            int >= 1
    slots        int >= 1
    delta        int >= 1                  [1]
    gst          int >= 0                  [0]
    seed         int                       [0]
    kappa        int >= 1                  [6]
    eta          int >= 1 or null          [null]
    leaders      round-robin | random      [round-robin]
    adversary    {kind, beta | validators, reveal_delay, partition}
    sleep        {"<id>": [[sleep_at, wake_at or null], ...]}
    stakes       [stake per validator]     [32 each]
    cumulative   {modification, window, depth, fresh, seed}

``variant``, ``n`` and ``slots`` may be omitted only when ``cumulative`` is
given, in which case the scenario is a pure accounting run on the chapter
fixture distribution.
"""

from __future__ import annotations

import argparse
import csv
import io
import itertools
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from importlib import resources
from pathlib import Path
from typing import Optional

import numpy as np

from . import cumulative as cum
from .netsim import (AdversaryKind, AdversaryPolicy, ConfigError, Metrics, NetworkConfig,
                     SleepSchedule, Trace, evaluate, run)
from .tob import Variant

log = logging.getLogger(__name__)

EXIT_OK, EXIT_SAFETY, EXIT_CONFIG, EXIT_IO = 0, 1, 2, 3

TOP_KEYS = {"name", "variant", "n", "slots", "delta", "gst", "seed", "kappa", "eta", "leaders",
            "adversary", "sleep", "stakes", "cumulative"}
ADVERSARY_KEYS = {"kind", "beta", "validators", "reveal_delay", "partition"}
CUMULATIVE_KEYS = {"modification", "window", "depth", "fresh", "seed"}


@dataclass(frozen=True)
class CumulativeConfig:
    modification: cum.Modification = cum.MOD3
    window: int = 32
    depth: int = 40
    fresh: bool = True
    seed: int = 0


@dataclass
class Scenario:
    name: str
    variant: Optional[Variant]
    network: Optional[NetworkConfig]
    slots: int
    adversary: AdversaryPolicy = field(default_factory=AdversaryPolicy)
    sleep: SleepSchedule = field(default_factory=SleepSchedule)
    stakes: Optional[dict] = None
    cumulative: Optional[CumulativeConfig] = None
    raw: dict = field(default_factory=dict, repr=False)

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, network=replace(self.network, seed=seed)) if self.network else self


class ScenarioIOError(OSError):
    pass


def _int(d: dict, key: str, default=None, lo: Optional[int] = None, path: str = ""):
    v = d.get(key, default)
    if v is None:
        return None
    if isinstance(v, bool) or not isinstance(v, int):
        raise ConfigError(path + key, f"expected an integer, got {v!r}")
    if lo is not None and v < lo:
        raise ConfigError(path + key, f"must be >= {lo}")
    return v


def _unknown(d: dict, allowed: set, path: str):
    for k in sorted(d):
        if k not in allowed:
            raise ConfigError(path + k, "unknown key")


def scenario_from_dict(d: dict, name: str = "scenario") -> Scenario:
    if not isinstance(d, dict):
        raise ConfigError("<root>", "scenario must be a JSON object")
    _unknown(d, TOP_KEYS, "")
    name = d.get("name", name)
    cumulative = None
    if "cumulative" in d:
        c = d["cumulative"]
        if not isinstance(c, dict):
            raise ConfigError("cumulative", "expected an object")
        _unknown(c, CUMULATIVE_KEYS, "cumulative.")
        try:
            mod = cum.Modification(str(c.get("modification", "mod3")).lower())
        except ValueError:
            raise ConfigError("cumulative.modification", "must be mod1, mod2 or mod3") from None
        cumulative = CumulativeConfig(mod, _int(c, "window", 32, 1, "cumulative."),
                                      _int(c, "depth", 40, 1, "cumulative."),
                                      bool(c.get("fresh", True)), _int(c, "seed", 0, 0, "cumulative."))
    if "variant" not in d and cumulative is not None:
        return Scenario(name, None, None, 0, cumulative=cumulative, raw=d)
    for req in ("variant", "n", "slots"):
        if req not in d:
            raise ConfigError(req, "required")
    try:
        variant = Variant(str(d["variant"]).lower())
    except ValueError:
        raise ConfigError("variant", f"unknown variant {d['variant']!r}") from None
    n = _int(d, "n", lo=1)
    slots = _int(d, "slots", lo=1)
    eta = d.get("eta")
    if eta is not None:
        eta = _int(d, "eta", lo=1)
    network = NetworkConfig(n, _int(d, "delta", 1, 1), _int(d, "gst", 0, 0), _int(d, "seed", 0),
                            _int(d, "kappa", 6, 1), eta, d.get("leaders", "round-robin"))

    adversary = AdversaryPolicy()
    if d.get("adversary") is not None:
        a = d["adversary"]
        if not isinstance(a, dict):
            raise ConfigError("adversary", "expected an object")
        _unknown(a, ADVERSARY_KEYS, "adversary.")
        try:
            kind = AdversaryKind(str(a.get("kind", "none")).lower())
        except ValueError:
            raise ConfigError("adversary.kind", f"unknown kind {a.get('kind')!r}") from None
        if "beta" in a and "validators" in a:
            raise ConfigError("adversary.beta", "give either beta or validators")
        if "validators" in a:
            vs = a["validators"]
            if not isinstance(vs, list) or any(not isinstance(v, int) or not 0 <= v < n for v in vs):
                raise ConfigError("adversary.validators", "must be a list of ids below n")
            members = frozenset(vs)
        else:
            beta = a.get("beta", 0.0)
            if not isinstance(beta, (int, float)) or not 0 <= beta < 1:
                raise ConfigError("adversary.beta", "must be in [0, 1)")
            members = AdversaryPolicy.with_fraction(kind, beta, n).validators
        partition = a.get("partition")
        if partition is not None:
            flat = [v for g in partition for v in g] if isinstance(partition, list) else None
            if flat is None or sorted(flat) != list(range(n)):
                raise ConfigError("adversary.partition", "groups must cover every id below n exactly once")
            partition = tuple(tuple(g) for g in partition)
        reveal = _int(a, "reveal_delay", None, 1, "adversary.")
        adversary = AdversaryPolicy(kind, members, reveal, partition)

    sleep = SleepSchedule()
    if d.get("sleep"):
        s = d["sleep"]
        if not isinstance(s, dict):
            raise ConfigError("sleep", "expected an object keyed by validator id")
        iv = {}
        for k, spans in s.items():
            try:
                v = int(k)
            except ValueError:
                raise ConfigError(f"sleep.{k}", "keys must be validator ids") from None
            if not 0 <= v < n:
                raise ConfigError(f"sleep.{k}", "validator id out of range")
            iv[v] = [(int(a), None if b is None else int(b)) for a, b in spans]
        sleep = SleepSchedule(iv)

    stakes = None
    if d.get("stakes") is not None:
        st = d["stakes"]
        if not isinstance(st, list) or len(st) != n or any(not isinstance(x, (int, float)) or x <= 0 for x in st):
            raise ConfigError("stakes", "must list one positive stake per validator")
        stakes = {i: st[i] for i in range(n)}
    return Scenario(name, variant, network, slots, adversary, sleep, stakes, cumulative, d)


def builtin_scenarios() -> list[str]:
    root = resources.files("ssf_lab") / "scenarios"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def _resolve(path) -> Path:
    p = Path(path)
    if p.exists():
        return p
    cand = Path(str(resources.files("ssf_lab") / "scenarios" / f"{path}.json"))
    if cand.exists():
        return cand
    raise ScenarioIOError(f"{path}: no such file or built-in scenario")


def parse_scenario(path) -> Scenario:
    p = _resolve(path)
    try:
        text = p.read_text()
    except OSError as e:
        raise ScenarioIOError(f"{p}: {e.strerror}") from e
    try:
        d = json.loads(text)
    except json.JSONDecodeError as e:
        raise ConfigError(f"line {e.lineno}", e.msg) from None
    return scenario_from_dict(d, p.stem)


# -- experiments -------------------------------------------------------------

LATENCIES = ("confirm", "decide", "justify", "finalize", "ssf_finalize")
SUMMARY_COLUMNS = (["scenario", "variant", "seed", "rounds_per_slot", "blocks", "honest_proposals",
                    "reorgs", "safety_violations", "offenses", "honest_offenses",
                    "msgs_per_slot_per_validator"]
                   + [f"{k}_{s}" for k in LATENCIES for s in ("mean", "min", "max")])


def _stats(xs):
    if not xs:
        return (None, None, None)
    return (round(float(np.mean(xs)), 6), min(xs), max(xs))


def summary_row(scenario: Scenario, seed, m: Metrics) -> dict:
    c = m.counts
    row = {"scenario": scenario.name, "variant": m.variant, "seed": seed,
           "rounds_per_slot": m.rounds, "blocks": c.get("blocks", 0),
           "honest_proposals": c.get("honest_proposals", 0), "reorgs": c.get("reorgs", 0),
           "safety_violations": m.safety_violations, "offenses": c.get("offenses", 0),
           "honest_offenses": c.get("honest_offenses", 0),
           "msgs_per_slot_per_validator": round(c.get("msgs_per_slot_per_validator", 0.0), 6)}
    for k in LATENCIES:
        for s, v in zip(("mean", "min", "max"), _stats(m.latencies.get(k, []))):
            row[f"{k}_{s}"] = v
    return row


def _run_seed(args):
    scenario, seed, out_dir = args
    sc = scenario.with_seed(seed)
    trace = run(sc)
    m = evaluate(trace)
    if out_dir is not None:
        base = Path(out_dir)
        trace.write(base / f"seed-{seed}.trace.jsonl")
        (base / f"seed-{seed}.metrics.csv").write_text(m.blocks_csv())
    return summary_row(scenario, seed, m), m


def _csv(rows: list[dict], columns) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in rows:
        w.writerow(["" if r.get(c) is None else r.get(c) for c in columns])
    return buf.getvalue()


def aggregate(scenario: Scenario, rows: list[dict], metrics: list[Metrics]) -> dict:
    agg = {"scenario": scenario.name, "variant": scenario.variant.value, "seed": "all",
           "rounds_per_slot": scenario.variant.rounds}
    for k in ("blocks", "honest_proposals", "reorgs", "safety_violations", "offenses", "honest_offenses"):
        agg[k] = sum(r[k] for r in rows)
    agg["msgs_per_slot_per_validator"] = round(float(np.mean([r["msgs_per_slot_per_validator"] for r in rows])), 6)
    for k in LATENCIES:
        xs = [x for m in metrics for x in m.latencies.get(k, [])]
        for s, v in zip(("mean", "min", "max"), _stats(xs)):
            agg[f"{k}_{s}"] = v
    return agg


def threads() -> int:
    try:
        return max(1, int(os.environ.get("SSF_LAB_THREADS", "1")))
    except ValueError:
        return 1


def run_cumulative(cfg: CumulativeConfig, out_dir=None) -> list[tuple[int, float, str]]:
    dist = cum.ch7_distribution()
    ledger, chain = cum.simulate_chain(dist, cfg.modification, cfg.depth, cfg.window, cfg.seed, cfg.fresh)
    curve = cum.attack_cost_curve(ledger, chain[0], range(cfg.depth + 1))
    rows = [(d, c, cfg.modification.value) for d, c in curve]
    if out_dir is not None:
        cum.write_curve_csv(Path(out_dir) / "curve.csv", rows)
    return rows


def run_experiment(scenario: Scenario, seeds, out_dir=None, workers: Optional[int] = None) -> dict:
    """Run every seed; returns ``{"rows", "aggregate", "exit_code", "curve"}``."""
    seeds = list(seeds)
    if out_dir is not None:
        try:
            Path(out_dir).mkdir(parents=True, exist_ok=True)
        except OSError as e:
            raise ScenarioIOError(f"{out_dir}: {e.strerror}") from e
    result = {"rows": [], "aggregate": None, "exit_code": EXIT_OK, "curve": None, "metrics": []}
    if scenario.cumulative is not None:
        result["curve"] = run_cumulative(scenario.cumulative, out_dir)
    if scenario.variant is None:
        return result
    jobs = [(scenario, s, out_dir) for s in seeds]
    workers = workers or threads()
    try:
        if workers > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=workers) as ex:
                outs = list(ex.map(_run_seed, jobs))
        else:
            outs = [_run_seed(j) for j in jobs]
    except OSError as e:
        raise ScenarioIOError(f"{out_dir}: {e.strerror}") from e
    rows = [r for r, _ in outs]
    metrics = [m for _, m in outs]
    agg = aggregate(scenario, rows, metrics)
    result.update(rows=rows, aggregate=agg, metrics=metrics)
    if agg["safety_violations"] or agg["honest_offenses"]:
        result["exit_code"] = EXIT_SAFETY
    if out_dir is not None:
        (Path(out_dir) / "summary.csv").write_text(_csv(rows + [agg], SUMMARY_COLUMNS))
    return result


REPORT_COLUMNS = ["scenario", "variant", "rounds_per_slot", "justify_latency", "finalize_latency",
                  "ssf_finalize_latency", "confirm_latency", "decide_latency",
                  "msgs_per_slot_per_validator", "reorgs", "safety_violations"]


def emit_report(summaries: list[dict]) -> tuple[str, str]:
    """Comparison table across experiment aggregates: ``(csv_text, text_table)``."""
    if not summaries:
        raise ValueError("emit_report needs at least one summary")
    rows = []
    for s in summaries:
        rows.append({"scenario": s["scenario"], "variant": s["variant"],
                     "rounds_per_slot": s["rounds_per_slot"],
                     "justify_latency": s.get("justify_mean"), "finalize_latency": s.get("finalize_mean"),
                     "ssf_finalize_latency": s.get("ssf_finalize_mean"),
                     "confirm_latency": s.get("confirm_mean"), "decide_latency": s.get("decide_mean"),
                     "msgs_per_slot_per_validator": s["msgs_per_slot_per_validator"],
                     "reorgs": s["reorgs"], "safety_violations": s["safety_violations"]})
    text_rows = [[("-" if r[c] in (None, "") else str(r[c])) for c in REPORT_COLUMNS] for r in rows]
    widths = [max(len(c), *(len(tr[i]) for tr in text_rows)) for i, c in enumerate(REPORT_COLUMNS)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(REPORT_COLUMNS, widths))]
    lines += ["  ".join(v.ljust(w) for v, w in zip(tr, widths)) for tr in text_rows]
    return _csv(rows, REPORT_COLUMNS), "\n".join(lines) + "\n"


def read_summary(path) -> dict:
    """The aggregate row of a ``summary.csv``, with numeric fields parsed."""
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    agg = [r for r in rows if r["seed"] == "all"][-1]
    out = {}
    for k, v in agg.items():
        if v == "":
            out[k] = None
            continue
        try:
            out[k] = int(v)
        except ValueError:
            try:
                out[k] = float(v)
            except ValueError:
                out[k] = v
    return out


# -- CLI ---------------------------------------------------------------------

def parse_seeds(text: str) -> list[int]:
    """``"3"``, ``"0..9"`` (inclusive) or ``"1,4,7"``."""
    try:
        if ".." in text:
            a, b = text.split("..")
            return list(range(int(a), int(b) + 1))
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError("--seeds", f"cannot parse {text!r}") from None


def _parse_param(text: str) -> tuple[str, list]:
    if "=" not in text:
        raise ConfigError("--param", f"expected key=v1,v2 got {text!r}")
    key, vals = text.split("=", 1)
    out = []
    for v in vals.split(","):
        try:
            out.append(json.loads(v))
        except json.JSONDecodeError:
            out.append(v)
    return key.strip(), out


def _set_path(d: dict, key: str, value):
    parts = key.split(".")
    for p in parts[:-1]:
        d = d.setdefault(p, {})
    d[parts[-1]] = value


def sweep(base: Scenario, params: list[tuple[str, list]], seeds, out_dir) -> list[dict]:
    """Cartesian product over ``params``; one sub-directory per combination."""
    results = []
    keys = [k for k, _ in params]
    for combo in itertools.product(*[v for _, v in params]):
        d = json.loads(json.dumps(base.raw))
        tag = []
        for k, v in zip(keys, combo):
            _set_path(d, k, v)
            tag.append(f"{k}={v}")
        d["name"] = f"{base.name}[{','.join(tag)}]"
        sc = scenario_from_dict(d, base.name)
        sub = Path(out_dir) / "_".join(t.replace("=", "-").replace(".", "-") for t in tag) if out_dir else None
        results.append(run_experiment(sc, seeds, sub))
    return results


def _emit(text: str, quiet: bool):
    if not quiet:
        sys.stdout.write(text)


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="ssf-lab", description="Consensus protocol laboratory")
    sub = ap.add_subparsers(dest="verb", required=True)
    for verb in ("validate", "run", "sweep"):
        p = sub.add_parser(verb)
        p.add_argument("--scenario", required=True, help="JSON file or built-in scenario name")
        if verb != "validate":
            p.add_argument("--seeds", default=None, help="N, A..B or A,B,C (default: scenario seed)")
            p.add_argument("--out", default=None, help="output directory")
        if verb == "sweep":
            p.add_argument("--param", action="append", default=[], help="key=v1,v2 (repeatable)")
        p.add_argument("--quiet", action="store_true")
    p = sub.add_parser("report")
    p.add_argument("summaries", nargs="*", help="summary.csv files or directories holding them")
    p.add_argument("--out", default=None, help="write report.csv here")
    p.add_argument("--quiet", action="store_true")
    sub.add_parser("list")
    args = ap.parse_args(argv)
    logging.basicConfig(level=logging.WARNING)
    try:
        if args.verb == "list":
            print("\n".join(builtin_scenarios()))
            return EXIT_OK
        if args.verb == "report":
            return _report(args)
        sc = parse_scenario(args.scenario)
        if args.verb == "validate":
            _emit(f"ok: {sc.name}\n", args.quiet)
            return EXIT_OK
        seeds = parse_seeds(args.seeds) if args.seeds else [sc.network.seed if sc.network else 0]
        if args.verb == "run":
            res = run_experiment(sc, seeds, args.out)
            if res["aggregate"] is not None:
                _emit(emit_report([res["aggregate"]])[1], args.quiet)
            if res["curve"] is not None:
                _emit("".join(f"depth {d:>4}  cost {c:,.0f} ETH  {m}\n" for d, c, m in res["curve"]), args.quiet)
            return res["exit_code"]
        params = [_parse_param(p) for p in args.param]
        results = sweep(sc, params, seeds, args.out)
        aggs = [r["aggregate"] for r in results if r["aggregate"] is not None]
        if aggs:
            csv_text, table = emit_report(aggs)
            _emit(table, args.quiet)
            if args.out:
                (Path(args.out) / "report.csv").write_text(csv_text)
        return max((r["exit_code"] for r in results), default=EXIT_OK)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (ScenarioIOError, OSError) as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


def _report(args) -> int:
    paths = []
    for s in args.summaries:
        p = Path(s)
        if p.is_dir():
            paths.extend(sorted(p.rglob("summary.csv")))
        elif p.exists():
            paths.append(p)
        else:
            raise ScenarioIOError(f"{s}: not found")
    if not paths:
        raise ConfigError("summaries", "no summary.csv found")
    csv_text, table = emit_report([read_summary(p) for p in paths])
    _emit(table, args.quiet)
    if args.out:
        Path(args.out).mkdir(parents=True, exist_ok=True)
        (Path(args.out) / "report.csv").write_text(csv_text)
    return EXIT_OK
