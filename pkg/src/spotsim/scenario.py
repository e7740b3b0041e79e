"""Scenario configuration and the run/compare pipelines.

Scenarios are versioned JSON documents describing the engine, the host
fleet, VM profiles and the randomized submission model. The workload for
one (config, seed) pair is a pure function of both, so the exact same VM
list can be replayed under different allocation policies.
"""

from __future__ import annotations

import copy
import hashlib
import json
import random
from dataclasses import dataclass, field
from importlib import resources as importlib_resources
from pathlib import Path

from .allocation import POLICY_NAMES, HlemParams, make_policy
from .kernel import EngineConfig
from .lifecycle import InterruptionBehavior, OnDemandInstance, SpotInstance
from .reporting import aggregate, export_tables
from .resources import Cloudlet, Host, VmSpec
from .runner import RunResult, run_simulation

SCHEMA_VERSION = 1

BUNDLED_SCENARIOS = ("randomly-generated", "restarting-interrupted",
                     "comparison", "trace")


class ScenarioError(ValueError):
    """Invalid scenario configuration; ``errors`` lists field paths."""

    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass
class HostProfile:
    name: str
    count: int
    pes: int
    mips: float
    ram: float
    bandwidth: float
    storage: float


@dataclass
class VmProfile:
    pes: int
    ram: float
    bandwidth: float
    storage: float
    spot: int
    on_demand: int
    mips: float = 1000.0
    cloudlet_pes: int | None = None  # defaults to the VM's PE count


@dataclass
class SubmissionModel:
    immediate_on_demand: int = 0
    delay_range: tuple[float, float] = (0.0, 0.0)
    duration_range: tuple[float, float] = (10.0, 10.0)
    spot_immediate: bool = True


@dataclass
class SpotDefaults:
    persistent: bool = True
    interruption_behavior: str = "HIBERNATE"
    minimum_running_time: float = 0.0
    warning_time: float = 0.0
    hibernation_time: float | None = None
    waiting_time: float | None = None


@dataclass
class OnDemandDefaults:
    persistent: bool = True
    waiting_time: float | None = None


@dataclass
class ScenarioConfig:
    name: str
    seed: int
    policy: str = "first-fit"
    engine: EngineConfig = field(default_factory=EngineConfig)
    hlem: HlemParams = field(default_factory=HlemParams)
    hosts: list[HostProfile] = field(default_factory=list)
    vm_profiles: list[VmProfile] = field(default_factory=list)
    submission: SubmissionModel = field(default_factory=SubmissionModel)
    spot: SpotDefaults = field(default_factory=SpotDefaults)
    on_demand: OnDemandDefaults = field(default_factory=OnDemandDefaults)
    scale: float = 1.0
    vm_destruction_delay: float = 0.0
    shutdown_when_idle: bool = False

    def to_dict(self) -> dict:
        return {
            "schema_version": SCHEMA_VERSION,
            "name": self.name,
            "seed": self.seed,
            "policy": self.policy,
            "engine": {
                "min_time_between_events": self.engine.min_time_between_events,
                "terminate_at": self.engine.terminate_at,
                "scheduling_interval": self.engine.scheduling_interval,
            },
            "broker": {
                "vm_destruction_delay": self.vm_destruction_delay,
                "shutdown_when_idle": self.shutdown_when_idle,
            },
            "hlem": {
                "resource_carrying_factor": self.hlem.resource_carrying_factor,
                "threshold": self.hlem.threshold,
                "alpha": self.hlem.alpha,
            },
            "scale": self.scale,
            "hosts": [vars(h).copy() for h in self.hosts],
            "vm_profiles": [vars(p).copy() for p in self.vm_profiles],
            "submission": {
                "immediate_on_demand": self.submission.immediate_on_demand,
                "delay_range": list(self.submission.delay_range),
                "duration_range": list(self.submission.duration_range),
                "spot_immediate": self.submission.spot_immediate,
            },
            "spot": vars(self.spot).copy(),
            "on_demand": vars(self.on_demand).copy(),
        }


class _Validator:
    def __init__(self, data: dict):
        self.data = data
        self.errors: list[str] = []

    def number(self, obj, key, path, *, positive=False, non_negative=False,
               optional=False, default=None):
        if key not in obj or obj[key] is None:
            if optional:
                return default
            self.errors.append(f"{path}.{key}: missing required value")
            return default
        value = obj[key]
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            self.errors.append(f"{path}.{key}: expected a number, got {value!r}")
            return default
        if positive and value <= 0:
            self.errors.append(f"{path}.{key}: must be > 0, got {value!r}")
            return default
        if non_negative and value < 0:
            self.errors.append(f"{path}.{key}: must be >= 0, got {value!r}")
            return default
        return value

    def integer(self, obj, key, path, **kwargs):
        value = self.number(obj, key, path, **kwargs)
        if value is not None and isinstance(value, float) and not value.is_integer():
            self.errors.append(f"{path}.{key}: expected an integer, got {value!r}")
            return None
        return int(value) if value is not None else None


def scenario_from_dict(data: dict) -> ScenarioConfig:
    """Parse and validate a scenario document; raises ScenarioError with a
    field path per problem."""
    v = _Validator(data)
    errors = v.errors
    if data.get("schema_version") != SCHEMA_VERSION:
        errors.append(f"schema_version: expected {SCHEMA_VERSION}, "
                      f"got {data.get('schema_version')!r}")
    name = data.get("name") or ""
    if not isinstance(name, str) or not name:
        errors.append("name: required non-empty string")
    seed = v.integer(data, "seed", "", non_negative=True)
    policy = data.get("policy", "first-fit")
    if policy not in POLICY_NAMES:
        errors.append(f"policy: must be one of {', '.join(POLICY_NAMES)}, "
                      f"got {policy!r}")
    eng = data.get("engine", {})
    engine = EngineConfig(
        min_time_between_events=v.number(
            eng, "min_time_between_events", "engine", positive=True,
            optional=True, default=0.5),
        terminate_at=v.number(eng, "terminate_at", "engine", non_negative=True,
                              optional=True),
        scheduling_interval=v.number(
            eng, "scheduling_interval", "engine", positive=True,
            optional=True, default=1.0),
    )
    brk = data.get("broker", {})
    destruction_delay = v.number(brk, "vm_destruction_delay", "broker",
                                 non_negative=True, optional=True, default=0.0)
    shutdown_when_idle = bool(brk.get("shutdown_when_idle", False))
    hl = data.get("hlem", {})
    hlem = HlemParams(
        resource_carrying_factor=v.number(
            hl, "resource_carrying_factor", "hlem", positive=True,
            optional=True, default=0.95),
        threshold=v.number(hl, "threshold", "hlem", optional=True, default=0.0),
        alpha=v.number(hl, "alpha", "hlem", optional=True, default=-0.5),
    )
    if hlem.resource_carrying_factor > 1.0:
        errors.append("hlem.resource_carrying_factor: must be in (0, 1]")
    scale = v.number(data, "scale", "", positive=True, optional=True, default=1.0)

    hosts = []
    names = set()
    for i, raw in enumerate(data.get("hosts", [])):
        path = f"hosts[{i}]"
        profile_name = raw.get("name", f"profile-{i}")
        if profile_name in names:
            errors.append(f"{path}.name: duplicate profile name {profile_name!r}")
        names.add(profile_name)
        hosts.append(HostProfile(
            name=profile_name,
            count=v.integer(raw, "count", path, positive=True) or 1,
            pes=v.integer(raw, "pes", path, positive=True) or 1,
            mips=v.number(raw, "mips", path, positive=True, optional=True,
                          default=1000.0),
            ram=v.number(raw, "ram", path, positive=True) or 1.0,
            bandwidth=v.number(raw, "bandwidth", path, positive=True) or 1.0,
            storage=v.number(raw, "storage", path, positive=True) or 1.0,
        ))
    if not hosts:
        errors.append("hosts: at least one host profile is required")

    profiles = []
    for i, raw in enumerate(data.get("vm_profiles", [])):
        path = f"vm_profiles[{i}]"
        profiles.append(VmProfile(
            pes=v.integer(raw, "pes", path, positive=True) or 1,
            ram=v.number(raw, "ram", path, positive=True) or 1.0,
            bandwidth=v.number(raw, "bandwidth", path, positive=True) or 1.0,
            storage=v.number(raw, "storage", path, positive=True) or 1.0,
            spot=v.integer(raw, "spot", path, non_negative=True, optional=True,
                           default=0),
            on_demand=v.integer(raw, "on_demand", path, non_negative=True,
                                optional=True, default=0),
            mips=v.number(raw, "mips", path, positive=True, optional=True,
                          default=1000.0),
            cloudlet_pes=v.integer(raw, "cloudlet_pes", path, positive=True,
                                   optional=True),
        ))
    if not profiles:
        errors.append("vm_profiles: at least one VM profile is required")

    sub = data.get("submission", {})
    delay_range = _range(v, sub, "delay_range", "submission", (0.0, 0.0))
    duration_range = _range(v, sub, "duration_range", "submission", (10.0, 10.0))
    submission = SubmissionModel(
        immediate_on_demand=v.integer(sub, "immediate_on_demand", "submission",
                                      non_negative=True, optional=True, default=0),
        delay_range=delay_range,
        duration_range=duration_range,
        spot_immediate=bool(sub.get("spot_immediate", True)),
    )

    sp = data.get("spot", {})
    behavior = sp.get("interruption_behavior", "HIBERNATE")
    if behavior not in ("HIBERNATE", "TERMINATE"):
        errors.append("spot.interruption_behavior: must be HIBERNATE or TERMINATE")
    spot = SpotDefaults(
        persistent=bool(sp.get("persistent", True)),
        interruption_behavior=behavior,
        minimum_running_time=v.number(sp, "minimum_running_time", "spot",
                                      non_negative=True, optional=True, default=0.0),
        warning_time=v.number(sp, "warning_time", "spot", non_negative=True,
                              optional=True, default=0.0),
        hibernation_time=v.number(sp, "hibernation_time", "spot",
                                  non_negative=True, optional=True),
        waiting_time=v.number(sp, "waiting_time", "spot", non_negative=True,
                              optional=True),
    )
    od = data.get("on_demand", {})
    on_demand = OnDemandDefaults(
        persistent=bool(od.get("persistent", True)),
        waiting_time=v.number(od, "waiting_time", "on_demand",
                              non_negative=True, optional=True),
    )
    if engine.terminate_at is None:
        if (spot.waiting_time is None and spot.persistent) or \
                (on_demand.waiting_time is None and on_demand.persistent):
            errors.append("engine.terminate_at: required when persistent "
                          "requests have no waiting_time")
    if errors:
        raise ScenarioError(errors)
    return ScenarioConfig(
        name=name, seed=seed, policy=policy, engine=engine, hlem=hlem,
        hosts=hosts, vm_profiles=profiles, submission=submission, spot=spot,
        on_demand=on_demand, scale=scale,
        vm_destruction_delay=destruction_delay,
        shutdown_when_idle=shutdown_when_idle,
    )


def _range(v: _Validator, obj, key, path, default):
    raw = obj.get(key)
    if raw is None:
        return default
    if (not isinstance(raw, (list, tuple)) or len(raw) != 2
            or any(isinstance(x, bool) or not isinstance(x, (int, float)) for x in raw)):
        v.errors.append(f"{path}.{key}: expected [low, high]")
        return default
    lo, hi = float(raw[0]), float(raw[1])
    if lo < 0 or hi < lo:
        v.errors.append(f"{path}.{key}: need 0 <= low <= high")
        return default
    return (lo, hi)


def bundled_scenario_path(name: str) -> Path:
    return Path(str(importlib_resources.files("spotsim") / "scenarios" / f"{name}.json"))


def load_scenario(source: str | Path) -> ScenarioConfig:
    """Load a scenario from a file path or a bundled scenario name."""
    path = Path(source)
    if not path.exists() and str(source) in BUNDLED_SCENARIOS:
        path = bundled_scenario_path(str(source))
    try:
        data = json.loads(path.read_text())
    except FileNotFoundError:
        raise ScenarioError([f"config: no such file or bundled scenario: {source}"])
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"config: invalid JSON: {exc}"])
    return scenario_from_dict(data)


# -- workload generation ------------------------------------------------------


def apportion(counts: list[int], scale: float) -> list[int]:
    """Scale integer counts by ``scale`` using the largest-remainder method,
    so the scaled total equals round(total * scale); ties go to the earliest
    entry."""
    if scale == 1.0:
        return list(counts)
    exact = [c * scale for c in counts]
    floors = [int(x) for x in exact]
    target = round(sum(counts) * scale)
    leftover = target - sum(floors)
    order = sorted(range(len(counts)), key=lambda i: (-(exact[i] - floors[i]), i))
    for i in order[:max(leftover, 0)]:
        floors[i] += 1
    return floors


def generate_infrastructure(config: ScenarioConfig) -> list[Host]:
    hosts = []
    counts = apportion([p.count for p in config.hosts], config.scale)
    for profile, count in zip(config.hosts, counts):
        for _ in range(count):
            hosts.append(Host(
                host_id=len(hosts), pe_count=profile.pes,
                mips_per_pe=profile.mips, ram=profile.ram,
                bandwidth=profile.bandwidth, storage=profile.storage,
            ))
    return hosts


def generate_workload(config: ScenarioConfig) -> list[tuple]:
    """Deterministic workload for (config, seed): spot VMs first (submitted
    immediately unless configured otherwise), then on-demand VMs of which
    ``immediate_on_demand`` (scaled) start at t=0 and the rest arrive with
    uniform delays. Every VM gets one cloudlet sized to run for its drawn
    duration at full allocation. The allocation policy never enters here."""
    rng = random.Random(config.seed)
    spot_counts = apportion([p.spot for p in config.vm_profiles], config.scale)
    od_counts = apportion([p.on_demand for p in config.vm_profiles], config.scale)
    behavior = InterruptionBehavior[config.spot.interruption_behavior]
    dur_lo, dur_hi = config.submission.duration_range
    delay_lo, delay_hi = config.submission.delay_range

    submissions = []
    vm_id = 0

    def add_cloudlet(vm, profile):
        duration = rng.uniform(dur_lo, dur_hi)
        pes = profile.cloudlet_pes or profile.pes
        rate = profile.mips * min(pes, profile.pes)
        cloudlet = Cloudlet(vm.vm_id, length=duration * rate, pes=pes)
        submissions.append((vm, [cloudlet]))

    for profile, count in zip(config.vm_profiles, spot_counts):
        spec_args = dict(mips=profile.mips, pe_count=profile.pes,
                         ram=profile.ram, bandwidth=profile.bandwidth,
                         storage=profile.storage)
        for _ in range(count):
            delay = 0.0 if config.submission.spot_immediate \
                else rng.uniform(delay_lo, delay_hi)
            vm = SpotInstance(
                vm_id, VmSpec(**spec_args),
                persistent=config.spot.persistent,
                waiting_time=config.spot.waiting_time,
                submission_delay=delay,
                interruption_behavior=behavior,
                minimum_running_time=config.spot.minimum_running_time,
                warning_time=config.spot.warning_time,
                hibernation_time=config.spot.hibernation_time,
            )
            add_cloudlet(vm, profile)
            vm_id += 1

    on_demand = []
    for profile, count in zip(config.vm_profiles, od_counts):
        spec_args = dict(mips=profile.mips, pe_count=profile.pes,
                         ram=profile.ram, bandwidth=profile.bandwidth,
                         storage=profile.storage)
        for _ in range(count):
            vm = OnDemandInstance(
                vm_id, VmSpec(**spec_args),
                persistent=config.on_demand.persistent,
                waiting_time=config.on_demand.waiting_time,
            )
            add_cloudlet(vm, profile)
            on_demand.append(vm)
            vm_id += 1
    immediate = round(config.submission.immediate_on_demand * config.scale)
    delayed_ids = list(range(len(on_demand)))
    rng.shuffle(delayed_ids)
    for position, index in enumerate(delayed_ids):
        if position < immediate:
            on_demand[index].submission_delay = 0.0
        else:
            on_demand[index].submission_delay = rng.uniform(delay_lo, delay_hi)
    return submissions


def workload_fingerprint(submissions: list[tuple]) -> str:
    """Hash of the generated workload (specs, kinds, delays, cloudlets);
    equal fingerprints mean byte-identical workloads."""
    h = hashlib.sha256()
    for vm, cloudlets in submissions:
        spec = vm.spec
        h.update((
            f"{vm.vm_id},{vm.kind.value},{spec.mips},{spec.pe_count},{spec.ram},"
            f"{spec.bandwidth},{spec.storage},{vm.persistent},{vm.waiting_time},"
            f"{vm.submission_delay!r}"
        ).encode())
        if vm.is_spot:
            h.update((
                f",{vm.interruption_behavior.value},{vm.minimum_running_time},"
                f"{vm.warning_time},{vm.hibernation_time}"
            ).encode())
        for c in cloudlets:
            h.update(f"|{c.cloudlet_id},{c.length!r},{c.pes}".encode())
        h.update(b"\n")
    return h.hexdigest()


# -- pipelines -------------------------------------------------------------------


@dataclass
class ScenarioRun:
    config: ScenarioConfig
    result: RunResult
    tables: dict
    exported: list[Path] = field(default_factory=list)


def run_scenario(config: ScenarioConfig, out_dir: str | Path | None = None,
                 fmt: str = "csv", *, debug_checks: bool = False,
                 collect_scorecards: bool = False) -> ScenarioRun:
    """Execute the full pipeline: generate infrastructure and workload,
    simulate under the configured policy, aggregate, optionally export."""
    hosts = generate_infrastructure(config)
    workload = generate_workload(config)
    policy = make_policy(config.policy, copy.copy(config.hlem))
    result = run_simulation(
        hosts, workload, policy, copy.copy(config.engine),
        vm_destruction_delay=config.vm_destruction_delay,
        shutdown_when_idle=config.shutdown_when_idle,
        debug_checks=debug_checks, collect_scorecards=collect_scorecards,
        seed=config.seed, scenario_name=config.name,
    )
    tables = aggregate(result)
    run = ScenarioRun(config=config, result=result, tables=tables)
    if out_dir is not None:
        run.exported = export_tables(tables, fmt, out_dir)
    return run


def compare_policies(config: ScenarioConfig, policies: list[str],
                     seeds: list[int]) -> list[dict]:
    """Run the identical workload under each policy for each seed and return
    one summary row per (policy, seed)."""
    if len(policies) < 2:
        raise ScenarioError(["policies: comparison needs at least two policies"])
    for name in policies:
        if name not in POLICY_NAMES:
            raise ScenarioError([f"policies: unknown policy {name!r}"])
    rows = []
    for seed in seeds:
        fingerprints = set()
        for policy_name in policies:
            cfg = copy.deepcopy(config)
            cfg.seed = seed
            cfg.policy = policy_name
            hosts = generate_infrastructure(cfg)
            workload = generate_workload(cfg)
            fingerprints.add(workload_fingerprint(workload))
            policy = make_policy(policy_name, copy.copy(cfg.hlem))
            result = run_simulation(
                hosts, workload, policy, copy.copy(cfg.engine),
                vm_destruction_delay=cfg.vm_destruction_delay,
                shutdown_when_idle=cfg.shutdown_when_idle,
                seed=seed, scenario_name=cfg.name,
            )
            summary = aggregate(result)["summary"]
            rows.append({
                "policy": policy_name,
                "seed": seed,
                "total_interruptions": summary["total_interruptions"],
                "interrupted_spot_vms": summary["interrupted_spot_vms"],
                "avg_interruption_s": summary["avg_interruption_s"],
                "max_interruption_s": summary["max_interruption_s"],
                "spot_completed": summary["spot_completed_without_interruption"]
                + summary["spot_completed_after_interruption"],
                "spot_terminated": summary["spot_terminated"],
                "spot_failed": summary["spot_failed"],
                "final_clock": summary["final_clock"],
            })
        if len(fingerprints) != 1:
            raise ScenarioError(
                [f"seed {seed}: workload differed across policies"])
    return rows
