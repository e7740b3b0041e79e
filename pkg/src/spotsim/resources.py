"""Physical and virtual resource model: hosts, VM specs and cloudlets.

Units are fixed as MB (RAM, storage), Mbps (bandwidth) and MI / MIPS
(work and compute rates). CPU capacity is reserved in whole processing
elements: a VM only fits on a host with enough free PEs.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum

from .kernel import SimulationError

DIMENSIONS = ("cpu", "ram", "bw", "storage")

# Remaining work below this many MI counts as finished.
FINISH_EPS = 1e-6


@dataclass
class VmSpec:
    """Resource demand of a VM: MIPS per PE plus the four reserved dimensions."""

    mips: float = 1000.0
    pe_count: int = 1
    ram: float = 512.0
    bandwidth: float = 1000.0
    storage: float = 10000.0

    def validate(self) -> None:
        for name in ("mips", "pe_count", "ram", "bandwidth", "storage"):
            if getattr(self, name) <= 0:
                raise SimulationError(f"VmSpec.{name} must be strictly positive")


class CloudletState(Enum):
    QUEUED = "QUEUED"
    RUNNING = "RUNNING"
    PAUSED = "PAUSED"
    FINISHED = "FINISHED"


class Cloudlet:
    """A unit of work in million instructions, bound to exactly one VM.

    Progress is preserved across pauses, so a cloudlet resumed after its
    VM hibernated finishes with total executed MI equal to its length.
    """

    def __init__(self, cloudlet_id: int, length: float, pes: int = 1,
                 file_size: float = 0.0, output_size: float = 0.0,
                 utilization: float = 1.0):
        if length < 0:
            raise SimulationError("cloudlet length must be >= 0")
        if not 0.0 <= utilization <= 1.0:
            raise SimulationError("cloudlet utilization must be in [0, 1]")
        self.cloudlet_id = cloudlet_id
        self.length = float(length)
        self.remaining = float(length)
        self.pes = int(pes)
        self.file_size = file_size
        self.output_size = output_size
        self.utilization = utilization
        self.state = CloudletState.QUEUED
        self.bound_vm: int | None = None
        self.executed = 0.0
        self.start_time: float | None = None
        self.finish_time: float | None = None

    def progress(self, amount: float) -> None:
        delta = min(amount, self.remaining)
        self.remaining -= delta
        self.executed += delta
        if self.remaining <= FINISH_EPS:
            self.executed += self.remaining
            self.remaining = 0.0

    @property
    def finished(self) -> bool:
        return self.remaining == 0.0

    def __repr__(self) -> str:
        return (f"Cloudlet({self.cloudlet_id}, len={self.length:.0f}, "
                f"rem={self.remaining:.0f}, {self.state.value})")


@dataclass
class AllocationResult:
    success: bool
    binding_dimension: str | None = None


class Host:
    """Physical machine: PEs at a fixed MIPS rating plus RAM, bandwidth and
    storage. All four dimensions are exclusive reservations; ``resident_vms``
    keeps allocation order."""

    def __init__(self, host_id: int, pe_count: int, mips_per_pe: float = 1000.0,
                 ram: float = 16384.0, bandwidth: float = 10000.0,
                 storage: float = 1000000.0):
        if pe_count <= 0 or mips_per_pe <= 0 or ram <= 0 or bandwidth <= 0 or storage <= 0:
            raise SimulationError("host capacities must be strictly positive")
        self.host_id = host_id
        self.pe_count = int(pe_count)
        self.mips_per_pe = float(mips_per_pe)
        self.ram = float(ram)
        self.bandwidth = float(bandwidth)
        self.storage = float(storage)
        self.free_pes = self.pe_count
        self.free_ram = self.ram
        self.free_bw = self.bandwidth
        self.free_storage = self.storage
        self.resident_vms: list = []
        # Incremental gauges; placement filters hit these on hot paths.
        self._used_mips = 0.0
        self._spot_demand = [0.0, 0.0, 0.0, 0.0]  # pes, ram, bw, storage

    # -- capacity ----------------------------------------------------------

    def binding_dimension(self, vm) -> str | None:
        """First dimension (in cpu/ram/bw/storage order) that cannot hold the
        VM, or None if it fits."""
        spec = vm.spec
        if self.free_pes < spec.pe_count:
            return "cpu"
        if self.free_ram < spec.ram:
            return "ram"
        if self.free_bw < spec.bandwidth:
            return "bw"
        if self.free_storage < spec.storage:
            return "storage"
        return None

    def fits(self, vm) -> bool:
        return self.binding_dimension(vm) is None

    def allocate(self, vm) -> AllocationResult:
        blocked = self.binding_dimension(vm)
        if blocked is not None:
            return AllocationResult(False, blocked)
        spec = vm.spec
        self.free_pes -= spec.pe_count
        self.free_ram -= spec.ram
        self.free_bw -= spec.bandwidth
        self.free_storage -= spec.storage
        self.resident_vms.append(vm)
        self._used_mips += spec.pe_count * spec.mips
        if vm.is_spot:
            self._bump_spot_demand(spec, +1)
        return AllocationResult(True)

    def deallocate(self, vm) -> None:
        if vm not in self.resident_vms:
            raise SimulationError(
                f"vm {vm.vm_id} is not resident on host {self.host_id}"
            )
        spec = vm.spec
        self.free_pes += spec.pe_count
        self.free_ram += spec.ram
        self.free_bw += spec.bandwidth
        self.free_storage += spec.storage
        self.resident_vms.remove(vm)
        self._used_mips -= spec.pe_count * spec.mips
        if vm.is_spot:
            self._bump_spot_demand(spec, -1)

    def _bump_spot_demand(self, spec: VmSpec, sign: int) -> None:
        self._spot_demand[0] += sign * spec.pe_count
        self._spot_demand[1] += sign * spec.ram
        self._spot_demand[2] += sign * spec.bandwidth
        self._spot_demand[3] += sign * spec.storage

    # -- derived gauges -----------------------------------------------------

    @property
    def total_mips(self) -> float:
        return self.pe_count * self.mips_per_pe

    @property
    def used_mips(self) -> float:
        return self._used_mips

    @property
    def cpu_utilization(self) -> float:
        """Reserved CPU capacity as a fraction of the host total."""
        return self._used_mips / self.total_mips

    def free_vector(self) -> tuple[float, float, float, float]:
        return (self.free_pes * self.mips_per_pe, self.free_ram,
                self.free_bw, self.free_storage)

    def total_vector(self) -> tuple[float, float, float, float]:
        return (self.total_mips, self.ram, self.bandwidth, self.storage)

    def spot_used_vector(self) -> tuple[float, float, float, float]:
        pes, ram, bw, sto = self._spot_demand
        return (pes * self.mips_per_pe, ram, bw, sto)

    def spot_demand_vector(self) -> tuple[float, float, float, float]:
        """Summed demand of ALL resident spot VMs (guard-blind upper bound
        on what a clearance could free)."""
        return tuple(self._spot_demand)

    def __repr__(self) -> str:
        return (f"Host({self.host_id}, pes={self.free_pes}/{self.pe_count}, "
                f"ram={self.free_ram:.0f}/{self.ram:.0f})")


def update_vm_processing(vm, now: float, allocated_mips: list[float]):
    """Advance every running cloudlet of ``vm`` to time ``now``.

    Cloudlets time-share the VM: each requests mips * min(own PEs, VM PEs)
    scaled by its utilization; if the sum exceeds the allocated capacity all
    requests shrink proportionally. Returns (newly finished cloudlets,
    earliest projected completion time or None).
    """
    if now < vm.last_update - 1e-9:
        raise SimulationError(
            f"negative processing delta for vm {vm.vm_id}: "
            f"{now} < {vm.last_update}"
        )
    dt = max(0.0, now - vm.last_update)
    vm.last_update = now
    running = [c for c in vm.cloudlets if c.state is CloudletState.RUNNING]
    if not running:
        return [], None
    rates = _cloudlet_rates(running, allocated_mips)
    finished = []
    for cloudlet, rate in rates:
        if dt > 0.0 and rate > 0.0:
            cloudlet.progress(rate * dt)
        if cloudlet.finished:
            cloudlet.state = CloudletState.FINISHED
            cloudlet.finish_time = now
            finished.append(cloudlet)
    next_completion = None
    for cloudlet, rate in rates:
        if cloudlet.finished or rate <= 0.0:
            continue
        eta = now + cloudlet.remaining / rate
        if next_completion is None or eta < next_completion:
            next_completion = eta
    return finished, next_completion


def _cloudlet_rates(running: list[Cloudlet], allocated_mips: list[float]):
    capacity = sum(allocated_mips)
    pe_count = len(allocated_mips)
    requests = []
    for cloudlet in running:
        usable = allocated_mips[: min(cloudlet.pes, pe_count)]
        requests.append(sum(usable) * cloudlet.utilization)
    total = sum(requests)
    scale = 1.0 if total <= capacity or total == 0.0 else capacity / total
    return [(c, r * scale) for c, r in zip(running, requests)]


def check_host_conservation(host: Host, tol: float = 1e-9) -> None:
    """Assert free + sum of resident demands == total in every dimension."""
    sums = [0.0, 0.0, 0.0, 0.0]
    for vm in host.resident_vms:
        sums[0] += vm.spec.pe_count
        sums[1] += vm.spec.ram
        sums[2] += vm.spec.bandwidth
        sums[3] += vm.spec.storage
    pairs = (
        ("cpu", host.free_pes + sums[0], host.pe_count),
        ("ram", host.free_ram + sums[1], host.ram),
        ("bw", host.free_bw + sums[2], host.bandwidth),
        ("storage", host.free_storage + sums[3], host.storage),
    )
    for name, got, want in pairs:
        if not math.isclose(got, want, rel_tol=0.0, abs_tol=tol):
            raise SimulationError(
                f"capacity conservation violated on host {host.host_id} "
                f"({name}): free+used={got} != total={want}"
            )
