import copy
import json

import pytest

from spotsim.cli import main
from spotsim.scenario import (
    BUNDLED_SCENARIOS,
    ScenarioError,
    apportion,
    bundled_scenario_path,
    compare_policies,
    generate_infrastructure,
    generate_workload,
    load_scenario,
    run_scenario,
    scenario_from_dict,
    workload_fingerprint,
)

from conftest import write_synthetic_trace


def bundled_dict(name="restarting-interrupted"):
    return json.loads(bundled_scenario_path(name).read_text())


def test_all_bundled_scenarios_load():
    for name in BUNDLED_SCENARIOS:
        if name == "trace":
            continue  # trace options have their own shape
        config = load_scenario(name)
        assert config.name == name


def test_validation_error_names_field_path():
    data = bundled_dict()
    data["hosts"][0]["ram"] = -5
    with pytest.raises(ScenarioError) as excinfo:
        scenario_from_dict(data)
    assert any("hosts[0].ram" in e for e in excinfo.value.errors)


def test_validation_collects_multiple_errors():
    data = bundled_dict()
    data["hosts"][0]["ram"] = -5
    data["policy"] = "wishful-fit"
    data["vm_profiles"][0]["pes"] = 0
    with pytest.raises(ScenarioError) as excinfo:
        scenario_from_dict(data)
    joined = "\n".join(excinfo.value.errors)
    assert "hosts[0].ram" in joined
    assert "policy" in joined
    assert "vm_profiles[0].pes" in joined


def test_missing_schema_version_is_rejected():
    data = bundled_dict()
    del data["schema_version"]
    with pytest.raises(ScenarioError):
        scenario_from_dict(data)


def test_persistent_requests_without_bounds_are_rejected():
    data = bundled_dict()
    data["engine"]["terminate_at"] = None
    data["spot"]["waiting_time"] = None
    with pytest.raises(ScenarioError) as excinfo:
        scenario_from_dict(data)
    assert any("terminate_at" in e for e in excinfo.value.errors)


def test_config_round_trip_is_a_fixed_point():
    for name in ("restarting-interrupted", "comparison", "randomly-generated"):
        config = load_scenario(name)
        once = config.to_dict()
        again = scenario_from_dict(once).to_dict()
        assert once == again


def test_apportion_largest_remainder_hits_scaled_total():
    assert sum(apportion([20, 30, 30, 20], 0.25)) == 25
    assert apportion([20, 30, 30, 20], 1.0) == [20, 30, 30, 20]
    assert sum(apportion([31, 42, 36, 44, 40, 40, 36, 51, 33, 47], 0.25)) == 100


def test_comparison_infrastructure_at_quarter_scale_has_25_hosts():
    config = load_scenario("comparison")
    config.scale = 0.25
    assert len(generate_infrastructure(config)) == 25


def test_workload_identical_across_policies_and_distinct_across_seeds():
    config = load_scenario("comparison")
    config.scale = 0.1
    fingerprints = set()
    for policy in ("first-fit", "hlem", "hlem-adjusted"):
        cfg = copy.deepcopy(config)
        cfg.policy = policy
        fingerprints.add(workload_fingerprint(generate_workload(cfg)))
    assert len(fingerprints) == 1
    other = copy.deepcopy(config)
    other.seed = config.seed + 1
    assert workload_fingerprint(generate_workload(other)) not in fingerprints


def test_compare_rejects_single_policy():
    with pytest.raises(ScenarioError):
        compare_policies(load_scenario("comparison"), ["hlem"], [1])


def test_compare_emits_row_per_policy_per_seed():
    config = load_scenario("comparison")
    config.scale = 0.05
    rows = compare_policies(config, ["first-fit", "hlem-adjusted"], [1, 2])
    assert len(rows) == 4
    assert {(r["policy"], r["seed"]) for r in rows} == {
        ("first-fit", 1), ("first-fit", 2),
        ("hlem-adjusted", 1), ("hlem-adjusted", 2),
    }


def test_scenario_run_exports_reports(tmp_path):
    run = run_scenario(load_scenario("restarting-interrupted"),
                       out_dir=tmp_path, fmt="csv")
    names = {p.name for p in run.exported}
    assert names == {"vms.csv", "spot.csv", "executions.csv", "series.csv",
                     "summary.json"}


# -- command line ----------------------------------------------------------------


def test_cli_run_bundled_scenario(tmp_path, capsys):
    code = main(["run", "--config", "restarting-interrupted",
                 "--out", str(tmp_path), "--format", "json",
                 "--scorecards", str(tmp_path / "cards.jsonl")])
    assert code == 0
    out = capsys.readouterr().out
    assert "interruptions=1" in out
    cards = [json.loads(line) for line
             in (tmp_path / "cards.jsonl").read_text().splitlines()]
    assert cards and all("chosen_host" in c for c in cards)


def test_cli_rejects_invalid_config(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    data = bundled_dict()
    data["hosts"][0]["ram"] = -5
    bad.write_text(json.dumps(data))
    code = main(["run", "--config", str(bad), "--out", str(tmp_path)])
    assert code == 2
    assert "hosts[0].ram" in capsys.readouterr().err


def test_cli_missing_config_reports_error(tmp_path, capsys):
    code = main(["run", "--config", str(tmp_path / "nope.json")])
    assert code == 2


def test_cli_policy_and_alpha_overrides(tmp_path, capsys):
    code = main(["run", "--config", "restarting-interrupted",
                 "--policy", "hlem-adjusted", "--alpha", "-0.25",
                 "--out", str(tmp_path)])
    assert code == 0
    assert "policy=hlem-adjusted" in capsys.readouterr().out


def test_cli_compare_writes_table(tmp_path, capsys):
    code = main(["compare", "--config", "comparison", "--scale", "0.05",
                 "--policies", "first-fit,hlem-adjusted", "--seeds", "1",
                 "--out", str(tmp_path)])
    assert code == 0
    text = (tmp_path / "comparison.csv").read_text()
    assert text.startswith("policy,seed,total_interruptions")
    assert len(text.splitlines()) == 3


def test_cli_trace_pipeline(tmp_path, capsys):
    machines, tasks = write_synthetic_trace(tmp_path, tasks=40, unresolvable=2)
    code = main(["trace", "--machines", str(machines), "--tasks", str(tasks),
                 "--spot-count", "3", "--policy", "hlem",
                 "--out", str(tmp_path / "out")])
    assert code == 0
    stats = json.loads((tmp_path / "out" / "ingest_stats.json").read_text())
    assert stats["ingest"]["excluded_events"] == 2
    assert stats["injected_spot"] == 3
