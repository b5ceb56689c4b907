import json
import subprocess
import sys

import pytest

from ssf_lab.harness import (EXIT_CONFIG, EXIT_IO, EXIT_OK, EXIT_SAFETY, ConfigError, builtin_scenarios,
                             emit_report, main, parse_scenario, parse_seeds, read_summary, run_experiment,
                             scenario_from_dict)
from ssf_lab.netsim import AdversaryKind
from ssf_lab.tob import Variant


def write(tmp_path, d, name="s.json"):
    p = tmp_path / name
    p.write_text(json.dumps(d) if isinstance(d, dict) else d)
    return p


def test_minimal_defaults(tmp_path):
    sc = parse_scenario(write(tmp_path, {"variant": "ssf", "n": 4, "slots": 10}))
    net = sc.network
    assert (sc.variant, net.n, sc.slots) == (Variant.SSF, 4, 10)
    assert (net.delta, net.gst, net.kappa, net.eta, net.seed) == (1, 0, 6, None, 0)
    assert sc.adversary.kind is AdversaryKind.NONE


def test_unknown_key(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_scenario(write(tmp_path, {"variant": "ssf", "n": 4, "slots": 10, "foo": 1}))
    assert "foo" in str(e.value)
    with pytest.raises(ConfigError) as e:
        scenario_from_dict({"variant": "ssf", "n": 4, "slots": 1, "adversary": {"kind": "none", "bar": 1}})
    assert e.value.field == "adversary.bar"


def test_gst_without_adversary(tmp_path):
    sc = parse_scenario(write(tmp_path, {"variant": "prob_3d", "n": 4, "slots": 5, "gst": 12}))
    assert sc.network.gst == 12 and sc.adversary.kind is AdversaryKind.NONE


def test_json_error_reports_line(tmp_path):
    with pytest.raises(ConfigError) as e:
        parse_scenario(write(tmp_path, '{\n"variant": "ssf",\n oops\n}'))
    assert e.value.field == "line 3"


@pytest.mark.parametrize("d,field", [
    ({"n": 4, "slots": 1}, "variant"),
    ({"variant": "nope", "n": 4, "slots": 1}, "variant"),
    ({"variant": "ssf", "n": 0, "slots": 1}, "n"),
    ({"variant": "ssf", "n": 4, "slots": 0}, "slots"),
    ({"variant": "ssf", "n": 4, "slots": 1, "adversary": {"kind": "equivocate", "validators": [9]}},
     "adversary.validators"),
    ({"variant": "ssf", "n": 4, "slots": 1, "stakes": [1, 2]}, "stakes"),
    ({"variant": "ssf", "n": 4, "slots": 1, "sleep": {"7": [[0, 3]]}}, "sleep.7"),
])
def test_config_fields(d, field):
    with pytest.raises(ConfigError) as e:
        scenario_from_dict(d)
    assert e.value.field == field


def test_builtins_parse():
    names = builtin_scenarios()
    assert {"ssf-honest", "streamlined-honest", "partition-ssf", "ch7-mod2"} <= set(names)
    for n in names:
        parse_scenario(n)


def test_parse_seeds():
    assert parse_seeds("3") == [3]
    assert parse_seeds("0..3") == [0, 1, 2, 3]
    assert parse_seeds("1,5") == [1, 5]
    with pytest.raises(ConfigError):
        parse_seeds("x")


def small(variant, **kw):
    d = {"variant": variant, "n": 4, "slots": 8}
    d.update(kw)
    return scenario_from_dict(d, variant)


def test_run_experiment_outputs(tmp_path):
    res = run_experiment(small("ssf"), range(3), tmp_path)
    for s in range(3):
        assert (tmp_path / f"seed-{s}.trace.jsonl").exists()
        assert (tmp_path / f"seed-{s}.metrics.csv").exists()
    agg = read_summary(tmp_path / "summary.csv")
    assert agg["justify_mean"] == 0 and agg["ssf_finalize_mean"] == 0
    assert res["exit_code"] == EXIT_OK


def test_streamlined_summary_latency():
    agg = run_experiment(small("streamlined"), [0, 1])["aggregate"]
    assert agg["justify_mean"] == 2


def test_equivocation_exit_zero():
    sc = scenario_from_dict({"variant": "baseline_4d", "n": 10, "slots": 10,
                             "adversary": {"kind": "equivocate", "beta": 0.4}})
    res = run_experiment(sc, [0])
    assert res["exit_code"] == EXIT_OK
    assert res["metrics"][0].counts["conflicting_grade1"] == 0


def test_report_rows():
    aggs = [run_experiment(small(v), [0])["aggregate"] for v in ("ssf", "streamlined", "baseline_4d")]
    csv_text, table = emit_report(aggs)
    lines = csv_text.strip().splitlines()
    assert len(lines) == 4
    rows = [dict(zip(lines[0].split(","), l.split(","))) for l in lines[1:]]
    assert [r["rounds_per_slot"] for r in rows] == ["4", "3", "4"]
    assert float(rows[0]["justify_latency"]) == 0 and float(rows[1]["justify_latency"]) == 2
    assert float(rows[2]["decide_latency"]) == 1
    one_csv, _ = emit_report(aggs[:1])
    assert len(one_csv.strip().splitlines()) == 2
    with pytest.raises(ValueError):
        emit_report([])


def test_exit_codes(tmp_path, capsys):
    good = write(tmp_path, {"variant": "ssf", "n": 4, "slots": 3})
    bad = write(tmp_path, {"variant": "ssf", "n": 4, "slots": 3, "foo": 1}, "bad.json")
    assert main(["validate", "--scenario", str(good)]) == EXIT_OK
    assert main(["validate", "--scenario", str(bad)]) == EXIT_CONFIG
    assert main(["validate", "--scenario", str(tmp_path / "missing.json")]) == EXIT_IO
    assert main(["run", "--scenario", str(good), "--seeds", "0..1", "--out", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    assert main(["report", str(tmp_path / "o"), "--quiet"]) == EXIT_OK
    assert main(["report", str(tmp_path / "nothing")]) == EXIT_IO


def test_exit_safety_on_violation(monkeypatch, tmp_path):
    import ssf_lab.harness as h
    real = h.aggregate

    def fake(scenario, rows, metrics):
        agg = real(scenario, rows, metrics)
        agg["safety_violations"] = 1
        return agg
    monkeypatch.setattr(h, "aggregate", fake)
    assert run_experiment(small("ssf"), [0])["exit_code"] == EXIT_SAFETY


def test_sweep_cli(tmp_path):
    base = write(tmp_path, {"variant": "ssf", "n": 4, "slots": 4})
    out = tmp_path / "sw"
    assert main(["sweep", "--scenario", str(base), "--param", "n=4,5", "--param", "variant=ssf,streamlined",
                 "--out", str(out), "--quiet"]) == EXIT_OK
    report = (out / "report.csv").read_text().strip().splitlines()
    assert len(report) == 5


def test_cli_reproducible(tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    for d in (a, b):
        assert main(["run", "--scenario", "withhold-ssf", "--seeds", "0", "--out", str(d), "--quiet"]) == EXIT_OK
    for f in sorted(p.name for p in a.iterdir()):
        assert (a / f).read_bytes() == (b / f).read_bytes()


def test_cumulative_scenario(tmp_path):
    assert main(["run", "--scenario", "ch7-mod2", "--out", str(tmp_path), "--quiet"]) == EXIT_OK
    rows = (tmp_path / "curve.csv").read_text().splitlines()
    assert rows[0] == "depth,cost_eth,modification"
    assert rows[2].startswith("1,111957.")


def test_module_entry_point():
    out = subprocess.run([sys.executable, "-m", "ssf_lab", "list"], capture_output=True, text=True)
    assert out.returncode == 0 and "ssf-honest" in out.stdout
