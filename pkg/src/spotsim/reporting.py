"""Post-run metrics: VM lifecycle tables, spot interruption statistics,
execution timelines, active-instance time series and CSV/JSON export.

Column orders are fixed by the schema shipped with the package
(report_schema.json); together with half-up 2-decimal rounding of all
second-valued fields this makes exports byte-stable for identical runs.
"""

from __future__ import annotations

import csv
import json
from decimal import ROUND_HALF_UP, Decimal
from importlib import resources as importlib_resources
from pathlib import Path

from .lifecycle import DynamicVm, VmState
from .runner import RunResult

TABLE_COLUMNS = {
    "vms": ["vm_id", "kind", "final_state", "created_at", "destroyed_at",
            "host_sequence", "interruption_count"],
    "spot": ["vm_id", "interruption_count", "avg_interruption_s",
             "min_interruption_s", "max_interruption_s", "redeploy_count",
             "completed"],
    "executions": ["vm_id", "host_id", "start", "stop", "close_reason"],
    "series": ["time", "active_on_demand", "active_spot", "hibernated",
               "waiting"],
}

_TERMINAL = (VmState.FINISHED, VmState.TERMINATED, VmState.FAILED)


def round2(value: float | None) -> float | None:
    """Half-up rounding to 2 decimals, done in decimal to avoid the
    round-half-even surprises of float round()."""
    if value is None:
        return None
    return float(Decimal(repr(value)).quantize(Decimal("0.01"),
                                               rounding=ROUND_HALF_UP))


def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return f"{value:.2f}"
    return str(value)


def aggregate(result: RunResult) -> dict:
    """Build all report tables plus the run summary from a completed run."""
    vm_rows = []
    spot_rows = []
    exec_rows = []
    gaps: list[float] = []
    spot_vms = [vm for vm in result.vms if vm.is_spot]
    for vm in result.vms:
        interruptions = getattr(vm, "interruption_count", 0)
        vm_rows.append({
            "vm_id": vm.vm_id,
            "kind": vm.kind.value,
            "final_state": vm.state.value,
            "created_at": round2(vm.created_at),
            "destroyed_at": round2(vm.destroyed_at),
            "host_sequence": ";".join(str(h) for h in vm.history.host_sequence()),
            "interruption_count": interruptions,
        })
        for record in vm.history.records:
            exec_rows.append({
                "vm_id": vm.vm_id,
                "host_id": record.host_id,
                "start": round2(record.start),
                "stop": round2(record.stop),
                "close_reason": record.close_reason,
            })
    for vm in spot_vms:
        vm_gaps = vm.history.gaps()
        gaps.extend(vm_gaps)
        spot_rows.append({
            "vm_id": vm.vm_id,
            "interruption_count": vm.interruption_count,
            "avg_interruption_s": round2(vm.average_interruption_time()),
            "min_interruption_s": round2(min(vm_gaps)) if vm_gaps else None,
            "max_interruption_s": round2(max(vm_gaps)) if vm_gaps else None,
            "redeploy_count": vm.redeploy_count(),
            "completed": vm.state is VmState.FINISHED,
        })
    series_rows = [{
        "time": round2(s.time),
        "active_on_demand": s.active_on_demand,
        "active_spot": s.active_spot,
        "hibernated": s.hibernated,
        "waiting": s.waiting,
    } for s in result.series]
    summary = _summarize(result, spot_vms, gaps)
    return {
        "vms": vm_rows,
        "spot": spot_rows,
        "executions": exec_rows,
        "series": series_rows,
        "summary": summary,
    }


def _summarize(result: RunResult, spot_vms: list[DynamicVm],
               gaps: list[float]) -> dict:
    on_demand = [vm for vm in result.vms if not vm.is_spot]
    counts = {state: 0 for state in VmState}
    for vm in spot_vms:
        counts[vm.state] += 1
    cloudlets = [c for vm in result.vms for c in vm.cloudlets]
    # Abandoned work is reported with its remaining MI, not silently dropped.
    abandoned = [c for vm in result.vms
                 if vm.state in (VmState.TERMINATED, VmState.FAILED)
                 for c in vm.cloudlets if not c.finished]
    return {
        "scenario": result.scenario_name,
        "policy": result.policy_name,
        "seed": result.seed,
        "final_clock": round2(result.final_clock),
        "total_vms": len(result.vms),
        "spot_vms": len(spot_vms),
        "on_demand_vms": len(on_demand),
        "total_interruptions": sum(v.interruption_count for v in spot_vms),
        "interrupted_spot_vms": sum(1 for v in spot_vms if v.interruption_count > 0),
        "max_interruptions_per_vm": max(
            (v.interruption_count for v in spot_vms), default=0),
        "redeployed_spot_vms": sum(1 for v in spot_vms if v.redeploy_count() > 0),
        "interruption_gap_count": len(gaps),
        "avg_interruption_s": round2(sum(gaps) / len(gaps)) if gaps else None,
        "min_interruption_s": round2(min(gaps)) if gaps else None,
        "max_interruption_s": round2(max(gaps)) if gaps else None,
        "spot_completed_without_interruption": sum(
            1 for v in spot_vms
            if v.state is VmState.FINISHED and v.interruption_count == 0),
        "spot_completed_after_interruption": sum(
            1 for v in spot_vms
            if v.state is VmState.FINISHED and v.interruption_count > 0),
        "spot_terminated": counts[VmState.TERMINATED],
        "spot_failed": counts[VmState.FAILED],
        "spot_active_at_end": len(spot_vms) - sum(
            counts[s] for s in _TERMINAL),
        "on_demand_finished": sum(
            1 for v in on_demand if v.state is VmState.FINISHED),
        "on_demand_failed": sum(
            1 for v in on_demand if v.state is VmState.FAILED),
        "cloudlets_total": len(cloudlets),
        "cloudlets_finished": sum(1 for c in cloudlets if c.finished),
        "cloudlets_abandoned": len(abandoned),
        "abandoned_remaining_mi": round2(sum(c.remaining for c in abandoned)),
    }


def export_tables(tables: dict, fmt: str, out_dir: str | Path) -> list[Path]:
    """Write vms/spot/executions/series tables plus summary.json into
    ``out_dir``. ``fmt`` selects csv or json for the tables; the summary is
    always JSON."""
    if fmt not in ("csv", "json"):
        raise ValueError(f"unsupported export format: {fmt!r}")
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create report directory {out}: {exc}") from exc
    paths = []
    for name, columns in TABLE_COLUMNS.items():
        rows = tables[name]
        if fmt == "csv":
            path = out / f"{name}.csv"
            _write_csv(path, columns, rows)
        else:
            path = out / f"{name}.json"
            _write_json(path, {name: rows})
        paths.append(path)
    summary_path = out / "summary.json"
    _write_json(summary_path, {"summary": tables["summary"]})
    paths.append(summary_path)
    return paths


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    try:
        with open(path, "w", newline="\n", encoding="utf-8") as handle:
            writer = csv.writer(handle, lineterminator="\n")
            writer.writerow(columns)
            for row in rows:
                writer.writerow([_fmt(row[c]) for c in columns])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def _write_json(path: Path, payload: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as handle:
            json.dump(payload, handle, indent=2)
            handle.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def load_schema() -> dict:
    """Column orders as shipped in the package data."""
    text = (importlib_resources.files("spotsim") / "report_schema.json").read_text()
    return json.loads(text)
