"""Command-line front end: run a scenario, compare policies over seeds, or
drive a simulation from cluster trace files. Log verbosity comes from the
SPOTSIM_LOG environment variable (DEBUG/INFO/WARNING)."""

from __future__ import annotations

import argparse
import copy
import csv
import json
import logging
import os
import sys
from pathlib import Path

from .allocation import POLICY_NAMES, HlemParams, make_policy
from .kernel import EngineConfig
from .lifecycle import InterruptionBehavior
from .reporting import aggregate, export_tables
from .runner import run_simulation
from .scenario import (
    BUNDLED_SCENARIOS,
    ScenarioError,
    bundled_scenario_path,
    compare_policies,
    load_scenario,
    run_scenario,
)
from .trace import (
    ReferenceMachine,
    SpotInjectionConfig,
    TraceError,
    TraceSchema,
    build_trace_workload,
    read_machine_events,
    read_task_events,
)
from .resources import VmSpec

log = logging.getLogger("spotsim")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spotsim",
        description="Cloud marketspace simulator: spot instance lifecycles "
                    "under pluggable VM allocation policies.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    run_p = sub.add_parser("run", help="run one scenario and export reports")
    run_p.add_argument("--config", required=True,
                       help=f"scenario file or bundled name "
                            f"({', '.join(BUNDLED_SCENARIOS)})")
    run_p.add_argument("--policy", choices=POLICY_NAMES)
    run_p.add_argument("--alpha", type=float,
                       help="spot-load adjustment factor override")
    run_p.add_argument("--seed", type=int)
    run_p.add_argument("--scale", type=float)
    run_p.add_argument("--out", default="reports")
    run_p.add_argument("--format", choices=("csv", "json"), default="csv")
    run_p.add_argument("--debug-checks", action="store_true",
                       help="verify capacity/work conservation at every event")
    run_p.add_argument("--scorecards",
                       help="dump per-decision scoring records as JSON lines")
    run_p.set_defaults(func=cmd_run)

    cmp_p = sub.add_parser("compare",
                           help="run the same workload under several policies")
    cmp_p.add_argument("--config", required=True)
    cmp_p.add_argument("--policies", required=True,
                       help="comma-separated policy names")
    cmp_p.add_argument("--seeds", required=True,
                       help="comma-separated integer seeds")
    cmp_p.add_argument("--scale", type=float)
    cmp_p.add_argument("--out", default="reports")
    cmp_p.add_argument("--format", choices=("csv", "json"), default="csv")
    cmp_p.set_defaults(func=cmd_compare)

    trace_p = sub.add_parser("trace", help="simulate a cluster trace slice")
    trace_p.add_argument("--machines", required=True,
                         help="machine events file")
    trace_p.add_argument("--tasks", required=True, help="task events file")
    trace_p.add_argument("--options", default=str(bundled_scenario_path("trace")),
                         help="trace options file (default: bundled)")
    trace_p.add_argument("--schema-map",
                         help="JSON file remapping input column positions")
    trace_p.add_argument("--slice-hours", type=float)
    trace_p.add_argument("--max-machines", type=int)
    trace_p.add_argument("--spot-count", type=int)
    trace_p.add_argument("--policy", choices=POLICY_NAMES)
    trace_p.add_argument("--seed", type=int)
    trace_p.add_argument("--unresolved-mode", choices=("exclude", "policy"))
    trace_p.add_argument("--out", default="reports")
    trace_p.add_argument("--format", choices=("csv", "json"), default="csv")
    trace_p.set_defaults(func=cmd_trace)
    return parser


def cmd_run(args) -> int:
    config = load_scenario(args.config)
    if args.policy:
        config.policy = args.policy
    if args.alpha is not None:
        config.hlem.alpha = args.alpha
    if args.seed is not None:
        config.seed = args.seed
    if args.scale is not None:
        config.scale = args.scale
    run = run_scenario(config, out_dir=args.out, fmt=args.format,
                       debug_checks=args.debug_checks,
                       collect_scorecards=bool(args.scorecards))
    if args.scorecards:
        with open(args.scorecards, "w", encoding="utf-8") as handle:
            for card in run.result.scorecards:
                handle.write(json.dumps(card.to_dict()) + "\n")
    summary = run.tables["summary"]
    print(f"scenario={config.name} policy={config.policy} seed={config.seed} "
          f"clock={summary['final_clock']}")
    print(f"interruptions={summary['total_interruptions']} "
          f"avg_gap={summary['avg_interruption_s']} "
          f"max_gap={summary['max_interruption_s']}")
    print("reports: " + ", ".join(str(p) for p in run.exported))
    return 0


def cmd_compare(args) -> int:
    config = load_scenario(args.config)
    if args.scale is not None:
        config.scale = args.scale
    policies = [p.strip() for p in args.policies.split(",") if p.strip()]
    seeds = [int(s) for s in args.seeds.split(",") if s.strip()]
    rows = compare_policies(config, policies, seeds)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    columns = list(rows[0].keys())
    if args.format == "csv":
        path = out / "comparison.csv"
        with open(path, "w", newline="\n", encoding="utf-8") as handle:
            writer = csv.DictWriter(handle, fieldnames=columns,
                                    lineterminator="\n")
            writer.writeheader()
            writer.writerows(rows)
    else:
        path = out / "comparison.json"
        with open(path, "w", encoding="utf-8") as handle:
            json.dump({"comparison": rows}, handle, indent=2)
            handle.write("\n")
    header = f"{'policy':<14}{'seed':>6}{'interruptions':>15}{'avg_gap':>10}{'max_gap':>10}"
    print(header)
    for row in rows:
        print(f"{row['policy']:<14}{row['seed']:>6}"
              f"{row['total_interruptions']:>15}"
              f"{row['avg_interruption_s'] if row['avg_interruption_s'] is not None else '-':>10}"
              f"{row['max_interruption_s'] if row['max_interruption_s'] is not None else '-':>10}")
    print(f"comparison written to {path}")
    return 0


def cmd_trace(args) -> int:
    options = json.loads(Path(args.options).read_text())
    schema = TraceSchema()
    if args.schema_map:
        schema = TraceSchema.from_dict(json.loads(Path(args.schema_map).read_text()))
    ref_raw = options.get("reference_machine", {})
    reference = ReferenceMachine(**ref_raw) if ref_raw else ReferenceMachine()
    ingest = options.get("ingest", {})
    injection_raw = copy.deepcopy(options.get("spot_injection", {}))
    vm_raw = injection_raw.pop("vm", None)
    behavior = injection_raw.pop("interruption_behavior", "HIBERNATE")
    injection = SpotInjectionConfig(
        behavior=InterruptionBehavior[behavior], **injection_raw)
    if vm_raw:
        injection.spec = VmSpec(
            mips=vm_raw.get("mips", 1000.0), pe_count=vm_raw.get("pes", 1),
            ram=vm_raw.get("ram", 1024.0),
            bandwidth=vm_raw.get("bandwidth", 100.0),
            storage=vm_raw.get("storage", 1000.0))
    if args.spot_count is not None:
        injection.count = args.spot_count
    seed = args.seed if args.seed is not None else options.get("seed", 0)
    policy_name = args.policy or options.get("policy", "first-fit")

    machines = read_machine_events(args.machines, schema)
    tasks = read_task_events(args.tasks, schema)
    workload = build_trace_workload(
        machines, tasks, reference=reference,
        unresolved_mode=args.unresolved_mode or ingest.get("unresolved_mode", "exclude"),
        slice_hours=args.slice_hours if args.slice_hours is not None
        else ingest.get("slice_hours"),
        max_machines=args.max_machines if args.max_machines is not None
        else ingest.get("max_machines"),
        injection=injection, seed=seed,
        waiting_time=ingest.get("waiting_time"),
    )
    eng = options.get("engine", {})
    engine = EngineConfig(
        min_time_between_events=eng.get("min_time_between_events", 0.5),
        terminate_at=eng.get("terminate_at"),
        scheduling_interval=eng.get("scheduling_interval", 1.0),
    )
    hl = options.get("hlem", {})
    params = HlemParams(
        resource_carrying_factor=hl.get("resource_carrying_factor", 0.95),
        threshold=hl.get("threshold", 0.0), alpha=hl.get("alpha", -0.5))
    brk = options.get("broker", {})
    result = run_simulation(
        workload.hosts, workload.submissions, make_policy(policy_name, params),
        engine, vm_destruction_delay=brk.get("vm_destruction_delay", 0.0),
        shutdown_when_idle=brk.get("shutdown_when_idle", True),
        seed=seed, scenario_name="trace",
    )
    tables = aggregate(result)
    out = Path(args.out)
    paths = export_tables(tables, args.format, out)
    stats_path = out / "ingest_stats.json"
    with open(stats_path, "w", encoding="utf-8") as handle:
        json.dump({"ingest": workload.stats.to_dict(),
                   "machines": workload.machine_count,
                   "tasks": workload.task_count,
                   "synthetic_vms": workload.synthetic_vm_count,
                   "injected_spot": workload.injected_spot_count},
                  handle, indent=2)
        handle.write("\n")
    print(f"trace: {workload.machine_count} hosts, "
          f"{workload.synthetic_vm_count} synthetic VMs, "
          f"{workload.task_count} tasks, excluded "
          f"{workload.stats.excluded_pct:.1f}%")
    summary = tables["summary"]
    print(f"policy={policy_name} clock={summary['final_clock']} "
          f"interruptions={summary['total_interruptions']}")
    print("reports: " + ", ".join(str(p) for p in [*paths, stats_path]))
    return 0


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("SPOTSIM_LOG", "WARNING").upper(),
                        format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ScenarioError as exc:
        for error in exc.errors:
            print(f"config error: {error}", file=sys.stderr)
        return 2
    except (TraceError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
