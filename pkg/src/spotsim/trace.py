"""Cluster-trace ingestion: machine events create hosts, task events are
grouped into synthetic VMs (by user and machine id) whose tasks become
cloudlets, and a configurable spot workload can be injected on top.

Input files are delimiter-separated text, one table per file, with the
column layout of the public 2011 cluster dataset by default; a schema map
allows reordered columns. Timestamps are microseconds and are converted to
simulation seconds without additional rounding.
"""

from __future__ import annotations

import csv
import math
import random
from collections import Counter
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path

from .lifecycle import InterruptionBehavior, OnDemandInstance, SpotInstance
from .resources import Cloudlet, Host, VmSpec

US_PER_SECOND = 1_000_000.0


class TraceError(ValueError):
    """Unrecoverable problem in the trace input."""


class MachineEventKind(Enum):
    ADD = 0
    REMOVE = 1
    UPDATE = 2


class TaskEventKind(Enum):
    SUBMIT = 0
    SCHEDULE = 1
    EVICT = 2
    FAIL = 3
    FINISH = 4
    KILL = 5
    LOST = 6
    UPDATE = 7


# Raw trace codes 7 (update pending) and 8 (update running) both map to UPDATE.
_TASK_KIND_BY_CODE = {
    0: TaskEventKind.SUBMIT, 1: TaskEventKind.SCHEDULE, 2: TaskEventKind.EVICT,
    3: TaskEventKind.FAIL, 4: TaskEventKind.FINISH, 5: TaskEventKind.KILL,
    6: TaskEventKind.LOST, 7: TaskEventKind.UPDATE, 8: TaskEventKind.UPDATE,
}

_TERMINAL_KINDS = (TaskEventKind.EVICT, TaskEventKind.FAIL, TaskEventKind.FINISH,
                   TaskEventKind.KILL, TaskEventKind.LOST)


@dataclass
class MachineEvent:
    timestamp_us: int
    machine_id: int
    kind: MachineEventKind
    cpu: float | None = None
    memory: float | None = None
    platform: str | None = None


@dataclass
class TaskEvent:
    timestamp_us: int
    job_id: int
    task_index: int
    machine_id: int | None
    kind: TaskEventKind
    user: str
    cpu_request: float | None = None
    memory_request: float | None = None


@dataclass
class TraceSchema:
    """Column positions in the input files (0-based)."""

    delimiter: str = ","
    machine_columns: dict = field(default_factory=lambda: {
        "timestamp": 0, "machine_id": 1, "event_type": 2,
        "platform": 3, "cpu": 4, "memory": 5,
    })
    task_columns: dict = field(default_factory=lambda: {
        "timestamp": 0, "job_id": 2, "task_index": 3, "machine_id": 4,
        "event_type": 5, "user": 6, "cpu_request": 9, "memory_request": 10,
    })

    @classmethod
    def from_dict(cls, data: dict) -> "TraceSchema":
        schema = cls()
        if "delimiter" in data:
            schema.delimiter = data["delimiter"]
        schema.machine_columns.update(data.get("machine_columns", {}))
        schema.task_columns.update(data.get("task_columns", {}))
        return schema


def _cell(row: list[str], index: int) -> str | None:
    if index >= len(row):
        return None
    value = row[index].strip()
    return value or None


def read_machine_events(path: str | Path,
                        schema: TraceSchema | None = None) -> list[MachineEvent]:
    schema = schema or TraceSchema()
    cols = schema.machine_columns
    events = []
    with open(path, newline="") as handle:
        for row in csv.reader(handle, delimiter=schema.delimiter):
            if not row:
                continue
            kind_code = _cell(row, cols["event_type"])
            cpu = _cell(row, cols["cpu"])
            memory = _cell(row, cols["memory"])
            events.append(MachineEvent(
                timestamp_us=int(_cell(row, cols["timestamp"]) or 0),
                machine_id=int(_cell(row, cols["machine_id"])),
                kind=MachineEventKind(int(kind_code)),
                cpu=float(cpu) if cpu is not None else None,
                memory=float(memory) if memory is not None else None,
                platform=_cell(row, cols["platform"]),
            ))
    return events


def read_task_events(path: str | Path,
                     schema: TraceSchema | None = None) -> list[TaskEvent]:
    schema = schema or TraceSchema()
    cols = schema.task_columns
    events = []
    with open(path, newline="") as handle:
        for row in csv.reader(handle, delimiter=schema.delimiter):
            if not row:
                continue
            machine = _cell(row, cols["machine_id"])
            cpu = _cell(row, cols["cpu_request"])
            memory = _cell(row, cols["memory_request"])
            events.append(TaskEvent(
                timestamp_us=int(_cell(row, cols["timestamp"]) or 0),
                job_id=int(_cell(row, cols["job_id"])),
                task_index=int(_cell(row, cols["task_index"])),
                machine_id=int(machine) if machine is not None else None,
                kind=_TASK_KIND_BY_CODE[int(_cell(row, cols["event_type"]))],
                user=_cell(row, cols["user"]) or "",
                cpu_request=float(cpu) if cpu is not None else None,
                memory_request=float(memory) if memory is not None else None,
            ))
    return events


# -- data preparation ---------------------------------------------------------


def prepare_machines(events: list[MachineEvent]) -> list[MachineEvent]:
    """Fill missing cpu/memory fields with the most common value among
    complete machines of the same platform (falling back to all platforms);
    ties break to the smallest value so the pass is deterministic."""
    out = []
    for attr in ("cpu", "memory"):
        if all(getattr(e, attr) is None for e in events) and events:
            raise TraceError(f"every machine event is missing {attr}")
    by_platform: dict[str | None, dict[str, Counter]] = {}
    global_counts = {"cpu": Counter(), "memory": Counter()}
    for event in events:
        slot = by_platform.setdefault(event.platform,
                                      {"cpu": Counter(), "memory": Counter()})
        for attr in ("cpu", "memory"):
            value = getattr(event, attr)
            if value is not None:
                slot[attr][value] += 1
                global_counts[attr][value] += 1

    def mode(counter: Counter) -> float | None:
        if not counter:
            return None
        return sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))[0][0]

    for event in events:
        fixed = {}
        for attr in ("cpu", "memory"):
            if getattr(event, attr) is None:
                value = mode(by_platform[event.platform][attr])
                if value is None:
                    value = mode(global_counts[attr])
                fixed[attr] = value
        out.append(replace(event, **fixed) if fixed else event)
    return out


@dataclass
class ReconcileStats:
    total_tasks: int = 0
    total_schedule_events: int = 0
    resolved_events: int = 0
    inherited_events: int = 0
    policy_allocated_events: int = 0
    excluded_events: int = 0
    excluded_tasks: int = 0
    mode: str = "exclude"

    @property
    def excluded_pct(self) -> float:
        if self.total_schedule_events == 0:
            return 0.0
        return 100.0 * self.excluded_events / self.total_schedule_events

    def to_dict(self) -> dict:
        return {
            "total_tasks": self.total_tasks,
            "total_schedule_events": self.total_schedule_events,
            "resolved_events": self.resolved_events,
            "inherited_events": self.inherited_events,
            "policy_allocated_events": self.policy_allocated_events,
            "excluded_events": self.excluded_events,
            "excluded_tasks": self.excluded_tasks,
            "excluded_pct": self.excluded_pct,
            "mode": self.mode,
        }


def reconcile_tasks(events: list[TaskEvent],
                    unresolved_mode: str = "exclude") -> tuple[list[TaskEvent], ReconcileStats]:
    """Give machine-less SCHEDULE events the machine id of the task's next
    event that carries one. Tasks that never resolve are either excluded or
    left to the active allocation policy, per ``unresolved_mode``."""
    if unresolved_mode not in ("exclude", "policy"):
        raise TraceError(f"unknown unresolved_mode: {unresolved_mode!r}")
    ordered = sorted(enumerate(events), key=lambda pair: (pair[1].timestamp_us, pair[0]))
    by_task: dict[tuple[int, int], list[TaskEvent]] = {}
    for _, event in ordered:
        by_task.setdefault((event.job_id, event.task_index), []).append(event)
    stats = ReconcileStats(mode=unresolved_mode, total_tasks=len(by_task))
    drop: set[tuple[int, int]] = set()
    for key, task_events in by_task.items():
        unresolved = 0
        for i, event in enumerate(task_events):
            if event.kind is not TaskEventKind.SCHEDULE:
                continue
            stats.total_schedule_events += 1
            if event.machine_id is not None:
                stats.resolved_events += 1
                continue
            donor = next((later.machine_id for later in task_events[i + 1:]
                          if later.machine_id is not None), None)
            if donor is not None:
                event.machine_id = donor
                stats.resolved_events += 1
                stats.inherited_events += 1
            else:
                unresolved += 1
        if unresolved:
            stats.excluded_tasks += 1 if unresolved_mode == "exclude" else 0
            if unresolved_mode == "exclude":
                stats.excluded_events += unresolved
                drop.add(key)
            else:
                stats.policy_allocated_events += unresolved
    kept = [event for _, event in ordered
            if (event.job_id, event.task_index) not in drop]
    return kept, stats


# -- synthetic vm grouping -------------------------------------------------------


@dataclass
class TaskRun:
    job_id: int
    task_index: int
    user: str
    machine_id: int | None
    cpu_request: float
    memory_request: float
    first_submit_us: int
    episodes: list[tuple[int, int]]  # (schedule, end) in microseconds

    @property
    def total_duration_s(self) -> float:
        return sum(end - start for start, end in self.episodes) / US_PER_SECOND


@dataclass
class SyntheticVm:
    user: str
    machine_id: int | None
    tasks: list[TaskRun]
    first_submit_us: int
    last_event_us: int
    max_concurrent_cpu: float
    max_concurrent_memory: float

    @property
    def key(self) -> tuple[str, int | None]:
        return (self.user, self.machine_id)


def group_synthetic_vms(events: list[TaskEvent],
                        horizon_us: int | None = None) -> list[SyntheticVm]:
    """One synthetic VM per distinct (user, machine id); each task becomes
    one cloudlet-to-be whose run time is the sum of its schedule episodes.
    An evicted or failed task that is re-scheduled continues the same task
    (progress is paused and resubmitted, not discarded)."""
    if horizon_us is None:
        horizon_us = max((e.timestamp_us for e in events), default=0)
    tasks: dict[tuple[int, int], dict] = {}
    for event in sorted(events, key=lambda e: e.timestamp_us):
        state = tasks.setdefault((event.job_id, event.task_index), {
            "user": event.user, "machine": None, "cpu": 0.0, "memory": 0.0,
            "first_submit": event.timestamp_us, "last_event": event.timestamp_us,
            "episodes": [], "open_start": None,
        })
        state["last_event"] = max(state["last_event"], event.timestamp_us)
        if event.user:
            state["user"] = event.user
        if event.cpu_request is not None:
            state["cpu"] = max(state["cpu"], event.cpu_request)
        if event.memory_request is not None:
            state["memory"] = max(state["memory"], event.memory_request)
        if event.kind is TaskEventKind.SCHEDULE:
            if state["machine"] is None and event.machine_id is not None:
                state["machine"] = event.machine_id
            if state["open_start"] is None:
                state["open_start"] = event.timestamp_us
        elif event.kind in _TERMINAL_KINDS and state["open_start"] is not None:
            state["episodes"].append((state["open_start"], event.timestamp_us))
            state["open_start"] = None
    groups: dict[tuple[str, int | None], list[TaskRun]] = {}
    for (job_id, task_index), state in tasks.items():
        if state["open_start"] is not None:
            state["episodes"].append((state["open_start"], horizon_us))
        if not state["episodes"]:
            continue  # task was submitted but never scheduled
        run = TaskRun(
            job_id=job_id, task_index=task_index, user=state["user"],
            machine_id=state["machine"], cpu_request=state["cpu"],
            memory_request=state["memory"],
            first_submit_us=state["first_submit"], episodes=state["episodes"],
        )
        groups.setdefault((run.user, run.machine_id), []).append(run)
    vms = []
    for (user, machine_id), runs in groups.items():
        vms.append(SyntheticVm(
            user=user, machine_id=machine_id, tasks=runs,
            first_submit_us=min(r.first_submit_us for r in runs),
            last_event_us=max(end for r in runs for _, end in r.episodes),
            max_concurrent_cpu=_max_concurrent(runs, "cpu_request"),
            max_concurrent_memory=_max_concurrent(runs, "memory_request"),
        ))
    vms.sort(key=lambda v: (v.first_submit_us, v.user, -1 if v.machine_id is None
                            else v.machine_id))
    return vms


def _max_concurrent(runs: list[TaskRun], attr: str) -> float:
    """Peak summed demand over the runs' episodes (half-open intervals)."""
    deltas: list[tuple[int, int, float]] = []
    for run in runs:
        value = getattr(run, attr)
        for start, end in run.episodes:
            deltas.append((start, 1, value))
            deltas.append((end, 0, value))
    deltas.sort(key=lambda d: (d[0], d[1]))  # ends before starts at equal time
    level = peak = 0.0
    for _, is_start, value in deltas:
        level = level + value if is_start else level - value
        peak = max(peak, level)
    return peak


# -- materialization ----------------------------------------------------------------


@dataclass
class ReferenceMachine:
    """Maps the trace's normalized capacity fractions to concrete units."""

    pe_count: int = 8
    mips: float = 1000.0
    ram: float = 16384.0
    bandwidth: float = 10000.0
    storage: float = 1000000.0
    vm_bandwidth: float = 100.0
    vm_storage: float = 1000.0


@dataclass
class SpotInjectionConfig:
    count: int = 0
    durations_s: list[float] = field(default_factory=lambda: [72000.0, 144000.0])
    submission_spread_s: float = 3600.0
    behavior: InterruptionBehavior = InterruptionBehavior.HIBERNATE
    minimum_running_time: float = 60.0
    warning_time: float = 120.0
    hibernation_time: float | None = 7200.0
    waiting_time: float | None = 86400.0
    persistent: bool = True
    spec: VmSpec = field(default_factory=lambda: VmSpec(
        mips=1000.0, pe_count=1, ram=1024.0, bandwidth=100.0, storage=1000.0))


def inject_spot_workload(config: SpotInjectionConfig, seed: int,
                         id_start: int = 0,
                         cloudlet_id_start: int = 0) -> list[tuple[SpotInstance, list[Cloudlet]]]:
    """Generate ``count`` spot VMs whose single cloudlet is sized so that
    uninterrupted execution takes exactly the configured duration; submission
    times are spread uniformly from the seed."""
    if config.count < 0:
        raise TraceError("spot injection count must be >= 0")
    rng = random.Random(seed)
    out = []
    for i in range(config.count):
        duration = config.durations_s[i % len(config.durations_s)]
        delay = rng.uniform(0.0, config.submission_spread_s) \
            if config.submission_spread_s > 0 else 0.0
        spec = replace(config.spec)
        vm = SpotInstance(
            id_start + i, spec, persistent=config.persistent,
            waiting_time=config.waiting_time, submission_delay=delay,
            interruption_behavior=config.behavior,
            minimum_running_time=config.minimum_running_time,
            warning_time=config.warning_time,
            hibernation_time=config.hibernation_time,
        )
        rate = spec.mips * min(spec.pe_count, spec.pe_count)
        cloudlet = Cloudlet(cloudlet_id_start + i, length=duration * rate,
                            pes=spec.pe_count)
        out.append((vm, [cloudlet]))
    return out


@dataclass
class TraceWorkload:
    hosts: list[Host]
    submissions: list[tuple]
    stats: ReconcileStats
    machine_count: int = 0
    task_count: int = 0
    synthetic_vm_count: int = 0
    injected_spot_count: int = 0


def build_trace_workload(machine_events: list[MachineEvent],
                         task_events: list[TaskEvent], *,
                         reference: ReferenceMachine | None = None,
                         unresolved_mode: str = "exclude",
                         slice_hours: float | None = None,
                         max_machines: int | None = None,
                         injection: SpotInjectionConfig | None = None,
                         seed: int = 0,
                         waiting_time: float | None = None) -> TraceWorkload:
    """Full ingest pipeline: prepare machines, reconcile and group tasks,
    materialize hosts and VM submissions, then inject the spot workload."""
    reference = reference or ReferenceMachine()
    if slice_hours is not None:
        cutoff = int(slice_hours * 3600 * US_PER_SECOND)
        machine_events = [e for e in machine_events if e.timestamp_us <= cutoff]
        task_events = [e for e in task_events if e.timestamp_us <= cutoff]
    machine_events = prepare_machines(machine_events)
    task_events, stats = reconcile_tasks(task_events, unresolved_mode)
    horizon = max((e.timestamp_us for e in task_events), default=0)
    synthetic = group_synthetic_vms(task_events, horizon_us=horizon)

    hosts = []
    seen: set[int] = set()
    for event in sorted(machine_events, key=lambda e: (e.timestamp_us, e.machine_id)):
        if event.kind is not MachineEventKind.ADD or event.machine_id in seen:
            continue
        seen.add(event.machine_id)
        if max_machines is not None and len(hosts) >= max_machines:
            continue
        hosts.append(Host(
            host_id=len(hosts),
            pe_count=max(1, round((event.cpu or 0.0) * reference.pe_count)),
            mips_per_pe=reference.mips,
            ram=max(1.0, round((event.memory or 0.0) * reference.ram)),
            bandwidth=reference.bandwidth,
            storage=reference.storage,
        ))
    if not hosts:
        raise TraceError("trace produced no hosts")

    submissions = []
    vm_id = 0
    cloudlet_id = 0
    task_count = 0
    for group in synthetic:
        pes = max(1, math.ceil(group.max_concurrent_cpu * reference.pe_count))
        spec = VmSpec(
            mips=reference.mips, pe_count=pes,
            ram=max(1.0, math.ceil(group.max_concurrent_memory * reference.ram)),
            bandwidth=reference.vm_bandwidth, storage=reference.vm_storage,
        )
        vm = OnDemandInstance(
            vm_id, spec, persistent=True, waiting_time=waiting_time,
            submission_delay=group.first_submit_us / US_PER_SECOND,
        )
        cloudlets = []
        for run in group.tasks:
            pes_cl = min(pes, max(1, math.ceil(run.cpu_request * reference.pe_count)))
            rate = reference.mips * pes_cl
            cloudlets.append(Cloudlet(
                cloudlet_id, length=max(1.0, run.total_duration_s * rate),
                pes=pes_cl,
            ))
            cloudlet_id += 1
            task_count += 1
        submissions.append((vm, cloudlets))
        vm_id += 1
    injected = 0
    if injection is not None and injection.count > 0:
        spot = inject_spot_workload(injection, seed, id_start=vm_id,
                                    cloudlet_id_start=cloudlet_id)
        submissions.extend(spot)
        injected = len(spot)
    return TraceWorkload(
        hosts=hosts, submissions=submissions, stats=stats,
        machine_count=len(hosts), task_count=task_count,
        synthetic_vm_count=len(synthetic), injected_spot_count=injected,
    )
