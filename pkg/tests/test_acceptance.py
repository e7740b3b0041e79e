"""Acceptance suite.

One test per acceptance criterion; each prints a PASS line when it
completes so the whole gate can be read off the test output:

  1 determinism        byte-identical exports for repeated seeded runs
  2 lifecycle          guard, warning lag, work conservation, hibernation bound
  3 scoring oracle     capacity matrix matches an independent brute force
  4 adjustment         negative alpha prefers the lower spot load
  5 directional        adjusted beats first-fit on interruptions and max gap
  6 minimal example    single-host spot/on-demand state walkthrough
  7 trace smoke        1,000-task synthetic trace end to end
  8 conservation       instrumented capacity/work checks on every scenario
"""

import copy
import math
import random
import time

from spotsim import (
    AdjustedHlemPolicy,
    EngineConfig,
    Host,
    OnDemandInstance,
    SpotInstance,
    VmSpec,
    VmState,
    adjusted_score,
    aggregate,
    evaluate_capacity_matrix,
    export_tables,
    make_policy,
    run_simulation,
)
from spotsim.allocation import select_best
from spotsim.scenario import compare_policies, load_scenario, run_scenario
from spotsim.trace import (
    SpotInjectionConfig,
    build_trace_workload,
    read_machine_events,
    read_task_events,
)

from conftest import write_synthetic_trace


def report(number, name):
    print(f"ACCEPTANCE {number} {name}: PASS")


# -- 1: determinism ---------------------------------------------------------------


def test_acceptance_1_determinism(tmp_path):
    scenarios = ["restarting-interrupted", "randomly-generated", "comparison"]
    for name in scenarios:
        config = load_scenario(name)
        if name == "comparison":
            config.scale = 0.25
        exports = []
        for attempt in ("a", "b"):
            started = time.monotonic()
            run = run_scenario(copy.deepcopy(config),
                               out_dir=tmp_path / name / attempt, fmt="csv")
            export_tables(run.tables, "json", tmp_path / name / attempt)
            elapsed = time.monotonic() - started
            assert elapsed < 10.0, f"{name} run took {elapsed:.1f}s"
            exports.append(sorted((tmp_path / name / attempt).iterdir()))
        for first, second in zip(*exports):
            assert first.name == second.name
            assert first.read_bytes() == second.read_bytes(), \
                f"{name}/{first.name} differs between identical runs"
    report(1, "determinism")


# -- 2: lifecycle suite ------------------------------------------------------------


def test_acceptance_2_lifecycle_suite():
    config = load_scenario("restarting-interrupted")
    run = run_scenario(config, debug_checks=True)
    spots = [vm for vm in run.result.vms if vm.is_spot]
    assert spots
    violations = []
    interrupted_records = 0
    for vm in spots:
        for record in vm.history.records:
            if record.close_reason != "interrupted":
                continue
            interrupted_records += 1
            if record.warned_at is None:
                violations.append(f"vm {vm.vm_id}: interruption without signal")
                continue
            if record.warned_at - record.start < vm.minimum_running_time - 1e-9:
                violations.append(f"vm {vm.vm_id}: guard violated")
            if record.stop - record.start < vm.minimum_running_time - 1e-9:
                violations.append(f"vm {vm.vm_id}: period below minimum")
            if abs((record.stop - record.warned_at) - vm.warning_time) > 1e-9:
                violations.append(f"vm {vm.vm_id}: warning lag "
                                  f"{record.stop - record.warned_at}")
        if vm.state is VmState.FINISHED and vm.interruption_count > 0:
            for cloudlet in vm.cloudlets:
                if not cloudlet.finished:
                    violations.append(f"vm {vm.vm_id}: unfinished cloudlet")
                elif not math.isclose(cloudlet.executed, cloudlet.length,
                                      rel_tol=1e-6):
                    violations.append(
                        f"vm {vm.vm_id}: executed {cloudlet.executed} != "
                        f"length {cloudlet.length}")
    assert interrupted_records > 0

    # hibernation expiry bound, exercised with a tightened limit
    expiring = load_scenario("restarting-interrupted")
    expiring.spot.hibernation_time = 5.0
    expiring.submission.duration_range = (40.0, 40.0)
    expire_run = run_scenario(expiring, debug_checks=True)
    timed_out = 0
    for vm in expire_run.result.vms:
        if not vm.is_spot:
            continue
        hibernated_at = None
        for when, _, state, _ in vm.state_history:
            if state is VmState.HIBERNATED:
                hibernated_at = when
            elif state is VmState.TERMINATED and hibernated_at is not None:
                timed_out += 1
                limit = vm.hibernation_time + expiring.engine.scheduling_interval
                if when - hibernated_at > limit + 1e-9:
                    violations.append(
                        f"vm {vm.vm_id}: hibernated {when - hibernated_at}s "
                        f"exceeds {limit}s")
    assert timed_out > 0
    assert violations == []
    report(2, "lifecycle suite")


# -- 3: scoring oracle -------------------------------------------------------------


def oracle_scores(free):
    """Independent direct evaluation of the scoring pipeline (plain loops,
    shared only through the documented degenerate-case conventions)."""
    n, dims = len(free), len(free[0])
    normalized, proportions = [], []
    for row in free:
        normalized.append([0.0] * dims)
        proportions.append([0.0] * dims)
    entropy = []
    for d in range(dims):
        column = [free[i][d] for i in range(n)]
        lo, hi = min(column), max(column)
        for i in range(n):
            normalized[i][d] = 1.0 if hi == lo else (column[i] - lo) / (hi - lo)
        total = sum(column)
        for i in range(n):
            proportions[i][d] = column[i] / total if total > 0 else 1.0 / n
        acc = 0.0
        for i in range(n):
            p = proportions[i][d]
            if p > 0:
                acc += p * math.log(p)
        entropy.append(-acc / math.log(n))
    variation = [1.0 - e for e in entropy]
    total_variation = sum(variation)
    if total_variation > 1e-12:
        weights = [g / total_variation for g in variation]
    else:
        weights = [1.0 / dims] * dims
    scores = [sum(weights[d] * normalized[i][d] for d in range(dims))
              for i in range(n)]
    return normalized, proportions, entropy, variation, weights, scores


def oracle_pick(host_ids, scores):
    best = None
    for host_id, score in zip(host_ids, scores):
        if best is None or score > best[1] or (score == best[1] and host_id < best[0]):
            best = (host_id, score)
    return best[0]


def test_acceptance_3_scoring_matches_brute_force():
    rng = random.Random(2024)
    cases = []
    for _ in range(1000):
        n = rng.randint(2, 10)
        cases.append([[float(rng.randint(1, 64)) for _ in range(4)]
                      for _ in range(n)])
    # degenerate shapes
    cases.append([[8.0, 3.0, 5.0, 7.0], [8.0, 6.0, 1.0, 2.0]])   # uniform dim
    cases.append([[0.0, 3.0, 5.0, 7.0], [0.0, 6.0, 1.0, 2.0]])   # zero-sum dim
    cases.append([[4.0, 4.0, 4.0, 4.0], [4.0, 4.0, 4.0, 4.0]])   # all uniform
    for free in cases:
        ids = list(range(17, 17 + len(free)))
        matrix = evaluate_capacity_matrix(ids, free)
        normalized, proportions, entropy, variation, weights, scores = \
            oracle_scores(free)
        for i in range(len(free)):
            for d in range(4):
                assert abs(matrix.normalized[i][d] - normalized[i][d]) <= 1e-9
                assert abs(matrix.proportions[i][d] - proportions[i][d]) <= 1e-9
        for d in range(4):
            assert abs(matrix.entropy[d] - entropy[d]) <= 1e-9
            assert abs(matrix.variation[d] - variation[d]) <= 1e-9
            assert abs(matrix.weights[d] - weights[d]) <= 1e-9
        for i in range(len(free)):
            assert abs(matrix.scores[i] - scores[i]) <= 1e-9
        assert matrix.host_ids[select_best(matrix.host_ids, matrix.scores)] \
            == oracle_pick(ids, scores)
    # single candidate: selected without scoring
    single = evaluate_capacity_matrix([9], [[1.0, 2.0, 3.0, 4.0]])
    assert single.single_candidate and single.scores == [1.0]
    report(3, "scoring oracle")


# -- 4: adjusted-score monotonicity ----------------------------------------------------


def test_acceptance_4_negative_alpha_prefers_lower_spot_load():
    rng = random.Random(4)
    for _ in range(1000):
        score = rng.uniform(1e-6, 1.0)
        low = rng.uniform(0.0, 1.0 - 1e-6)
        high = rng.uniform(low + 1e-9, 1.0)
        alpha = rng.uniform(-2.0, -1e-9)
        ranked = [adjusted_score(score, high, alpha),
                  adjusted_score(score, low, alpha)]
        assert select_best([0, 1], ranked) == 1, (score, low, high, alpha)

    # end to end: equal free capacity, only the spot composition differs
    def hosts():
        a = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
        b = Host(1, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
        spot = SpotInstance(0, VmSpec(1000, 2, 512, 1000, 10000))
        od = OnDemandInstance(1, VmSpec(1000, 2, 512, 1000, 10000))
        a.allocate(spot)
        b.allocate(od)
        return [a, b]

    outcome = AdjustedHlemPolicy().find_host(
        OnDemandInstance(2, VmSpec(1000, 2, 512, 1000, 10000)), hosts(), 0.0)
    assert outcome.host.host_id == 1
    report(4, "adjusted-score monotonicity")


# -- 5: directional comparison -----------------------------------------------------------


def test_acceptance_5_directional_comparison():
    config = load_scenario("comparison")
    config.scale = 0.25
    seeds = list(range(1, 11))
    started = time.monotonic()
    rows = compare_policies(config, ["first-fit", "hlem-adjusted"], seeds)
    elapsed = time.monotonic() - started
    assert elapsed < 300.0, f"comparison took {elapsed:.0f}s"
    interruption_wins = 0
    max_gap_wins = 0
    for seed in seeds:
        ff = next(r for r in rows
                  if r["seed"] == seed and r["policy"] == "first-fit")
        adjusted = next(r for r in rows
                        if r["seed"] == seed and r["policy"] == "hlem-adjusted")
        if adjusted["total_interruptions"] < ff["total_interruptions"]:
            interruption_wins += 1
        if (adjusted["max_interruption_s"] or 0.0) < (ff["max_interruption_s"] or 0.0):
            max_gap_wins += 1
    assert interruption_wins >= 8, f"only {interruption_wins}/10 interruption wins"
    assert max_gap_wins >= 7, f"only {max_gap_wins}/10 max-duration wins"
    report(5, "directional comparison")


# -- 6: minimal example ---------------------------------------------------------------------


def test_acceptance_6_minimal_example_state_sequence():
    run = run_scenario(load_scenario("restarting-interrupted"))
    spot = next(vm for vm in run.result.vms if vm.is_spot)
    assert spot.state_sequence() == [
        VmState.WAITING, VmState.RUNNING, VmState.WARNED,
        VmState.HIBERNATED, VmState.RUNNING, VmState.FINISHED,
    ]
    row = next(r for r in run.tables["spot"] if r["vm_id"] == spot.vm_id)
    assert row["interruption_count"] == 1
    assert row["avg_interruption_s"] > 0
    report(6, "minimal example")


# -- 7: trace smoke ---------------------------------------------------------------------------


def test_acceptance_7_trace_smoke(tmp_path):
    started = time.monotonic()
    machines_path, tasks_path = write_synthetic_trace(
        tmp_path, machines=20, tasks=1000, unresolvable=20)
    injection = SpotInjectionConfig(
        count=10, durations_s=[40.0], submission_spread_s=50.0,
        minimum_running_time=5.0, warning_time=2.0, hibernation_time=120.0,
        waiting_time=3600.0)
    workload = build_trace_workload(
        read_machine_events(machines_path), read_task_events(tasks_path),
        injection=injection, seed=11, waiting_time=3600.0)
    assert workload.stats.excluded_pct == 2.0  # exactly
    assert workload.stats.excluded_tasks == 20
    result = run_simulation(
        workload.hosts, workload.submissions, make_policy("first-fit"),
        EngineConfig(min_time_between_events=0.5, scheduling_interval=1.0),
        vm_destruction_delay=1.0, shutdown_when_idle=True, debug_checks=True,
        seed=11, scenario_name="trace-smoke")
    summary = aggregate(result)["summary"]
    terminal = (VmState.FINISHED, VmState.TERMINATED, VmState.FAILED)
    assert all(vm.state in terminal for vm in result.vms)
    assert (summary["spot_completed_without_interruption"]
            + summary["spot_completed_after_interruption"]
            + summary["spot_terminated"] + summary["spot_failed"]
            ) == summary["spot_vms"]
    assert workload.task_count == 980  # 1000 tasks minus the 20 excluded
    assert summary["cloudlets_total"] == workload.task_count + injection.count
    elapsed = time.monotonic() - started
    assert elapsed < 30.0, f"trace smoke took {elapsed:.1f}s"
    assert result.conservation_checks > 0
    report(7, "trace smoke")


# -- 8: conservation instrumentation ------------------------------------------------------------


def test_acceptance_8_conservation_on_every_scenario():
    checked = []
    for name in ("restarting-interrupted", "randomly-generated"):
        run = run_scenario(load_scenario(name), debug_checks=True)
        checked.append(run.result.conservation_checks)
    comparison = load_scenario("comparison")
    comparison.scale = 0.05
    run = run_scenario(comparison, debug_checks=True)
    checked.append(run.result.conservation_checks)
    assert all(count > 0 for count in checked)
    report(8, "work and capacity conservation")
