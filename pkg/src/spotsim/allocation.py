"""VM placement policies.

Three policies share one clearance mechanism for on-demand requests that
find no free host: first-fit (baseline), entropy-weighted host scoring,
and a variant that additionally penalizes hosts already loaded with spot
instances. The scoring pipeline per candidate set is:

  1. min-max normalize each host's free capacity per dimension,
  2. proportions p = capacity / column sum,
  3. per-dimension entropy e = -(1/ln n) * sum(p ln p),
  4. variation g = 1 - e, weights w = g / sum(g),
  5. host score = sum over dimensions of w * normalized capacity.

Dimensions with more variation across hosts get more weight. Degenerate
inputs use fixed conventions (see evaluate_capacity_matrix).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

from .kernel import SimulationError
from .lifecycle import DynamicVm, SpotInstance, VmKind, VmState
from .resources import Host

DIMENSION_COUNT = 4

# Guard for "all variation factors are zero" under floating point noise.
_ZERO_VARIATION = 1e-12


@dataclass
class HlemParams:
    """Tuning knobs for the scoring policies.

    ``alpha`` scales the spot-load adjustment; it is negative by default so
    that spot-heavy hosts score lower and new placements spread away from
    them (the sign is configurable).
    """

    resource_carrying_factor: float = 0.95
    threshold: float = 0.0
    alpha: float = -0.5

    def validate(self) -> None:
        if not 0.0 < self.resource_carrying_factor <= 1.0:
            raise SimulationError("resource_carrying_factor must be in (0, 1]")
        if not math.isfinite(self.alpha):
            raise SimulationError("alpha must be finite")


def rs_diff(cpu_request: float, cpu_utilization: float, carrying_factor: float) -> float:
    """CPU demand of the VM minus the host's scaled CPU utilization, both as
    fractions of the host's total CPU capacity. A host passes the filter when
    the result exceeds the configured threshold."""
    return cpu_request - cpu_utilization * carrying_factor


@dataclass
class CapacityMatrix:
    """All intermediate quantities of one scoring decision, kept for oracle
    tests and audit dumps."""

    host_ids: list[int]
    free: list[list[float]]
    normalized: list[list[float]]
    proportions: list[list[float]]
    entropy: list[float]
    variation: list[float]
    weights: list[float]
    scores: list[float]
    spot_loads: list[float] | None = None
    adjusted_scores: list[float] | None = None
    single_candidate: bool = False

    def to_dict(self) -> dict:
        return {
            "host_ids": self.host_ids,
            "free": self.free,
            "normalized": self.normalized,
            "proportions": self.proportions,
            "entropy": self.entropy,
            "variation": self.variation,
            "weights": self.weights,
            "scores": self.scores,
            "spot_loads": self.spot_loads,
            "adjusted_scores": self.adjusted_scores,
            "single_candidate": self.single_candidate,
        }


def evaluate_capacity_matrix(host_ids: Sequence[int],
                             free: Sequence[Sequence[float]]) -> CapacityMatrix:
    """Score a candidate set from its raw free-capacity matrix.

    Conventions for degenerate inputs:
      * a single candidate bypasses scoring (score 1.0, equal weights);
      * max == min in a dimension: normalized capacity 1.0 for every host;
      * column sum 0 in a dimension: uniform proportions (entropy 1, weight 0);
      * p == 0 contributes 0 to the entropy sum;
      * all variation factors 0: equal weights 1/D.
    """
    n = len(host_ids)
    if n == 0:
        raise SimulationError("cannot evaluate an empty candidate set")
    dims = len(free[0])
    rows = [list(map(float, row)) for row in free]
    if n == 1:
        return CapacityMatrix(
            host_ids=list(host_ids), free=rows,
            normalized=[[1.0] * dims], proportions=[[1.0] * dims],
            entropy=[1.0] * dims, variation=[0.0] * dims,
            weights=[1.0 / dims] * dims, scores=[1.0],
            single_candidate=True,
        )
    normalized = [[0.0] * dims for _ in range(n)]
    proportions = [[0.0] * dims for _ in range(n)]
    entropy = [0.0] * dims
    k = 1.0 / math.log(n)
    for d in range(dims):
        column = [rows[i][d] for i in range(n)]
        lo, hi = min(column), max(column)
        span = hi - lo
        for i in range(n):
            normalized[i][d] = (column[i] - lo) / span if span > 0 else 1.0
        total = sum(column)
        if total > 0:
            for i in range(n):
                proportions[i][d] = column[i] / total
        else:
            for i in range(n):
                proportions[i][d] = 1.0 / n
        acc = 0.0
        for i in range(n):
            p = proportions[i][d]
            if p > 0.0:
                acc += p * math.log(p)
        entropy[d] = -k * acc
    variation = [1.0 - e for e in entropy]
    total_variation = sum(variation)
    if total_variation > _ZERO_VARIATION:
        weights = [g / total_variation for g in variation]
    else:
        weights = [1.0 / dims] * dims
    scores = [
        sum(weights[d] * normalized[i][d] for d in range(dims))
        for i in range(n)
    ]
    return CapacityMatrix(
        host_ids=list(host_ids), free=rows, normalized=normalized,
        proportions=proportions, entropy=entropy, variation=variation,
        weights=weights, scores=scores,
    )


def spot_load(host: Host, weights: Sequence[float]) -> float:
    """Weighted fraction of the host's total capacity held by resident spot
    VMs, in [0, 1]."""
    used = host.spot_used_vector()
    total = host.total_vector()
    return sum(w * used[d] / total[d] for d, w in enumerate(weights))


def adjusted_score(host_score: float, load: float, alpha: float) -> float:
    return host_score * (1.0 + alpha * load)


def select_best(host_ids: Sequence[int], scores: Sequence[float]) -> int:
    """Index of the maximum score; ties resolve to the lowest host id."""
    best = 0
    for i in range(1, len(scores)):
        if scores[i] > scores[best] or (
            scores[i] == scores[best] and host_ids[i] < host_ids[best]
        ):
            best = i
    return best


@dataclass
class PolicyScorecard:
    """Per-decision record of the scoring intermediates."""

    vm_id: int
    candidate_ids: list[int]
    matrix: CapacityMatrix | None
    chosen_host: int | None
    used_spot_clearance: bool

    def to_dict(self) -> dict:
        return {
            "vm_id": self.vm_id,
            "candidate_ids": self.candidate_ids,
            "chosen_host": self.chosen_host,
            "used_spot_clearance": self.used_spot_clearance,
            "matrix": self.matrix.to_dict() if self.matrix else None,
        }


@dataclass
class PlacementOutcome:
    host: Host | None = None
    interrupted: list = field(default_factory=list)
    retry_at: float | None = None
    scorecard: PolicyScorecard | None = None


def clearable_spot_vms(host: Host, now: float) -> list[SpotInstance]:
    """Resident spot VMs eligible for a capacity interruption: running, past
    their minimum running time in the current period, and not already about
    to leave the host anyway."""
    eligible = []
    for vm in host.resident_vms:
        if not vm.is_spot or vm.state is not VmState.RUNNING:
            continue
        record = vm.history.open_record
        if record is None:
            continue
        if now - record.start < vm.minimum_running_time - 1e-9:
            continue
        if vm.all_cloudlets_finished():
            continue
        eligible.append(vm)
    return eligible


def potential_free_vector(host: Host, now: float) -> tuple[float, float, float, float]:
    """Free capacity the host would have if its clearable spot VMs were
    deallocated (CPU expressed in PEs)."""
    pes = float(host.free_pes)
    ram, bw, sto = host.free_ram, host.free_bw, host.free_storage
    for vm in clearable_spot_vms(host, now):
        pes += vm.spec.pe_count
        ram += vm.spec.ram
        bw += vm.spec.bandwidth
        sto += vm.spec.storage
    return (pes, ram, bw, sto)


def _fits_potential(vm: DynamicVm, vec: tuple[float, float, float, float]) -> bool:
    spec = vm.spec
    return (vec[0] >= spec.pe_count and vec[1] >= spec.ram
            and vec[2] >= spec.bandwidth and vec[3] >= spec.storage)


def _clearance_fits(vm: DynamicVm, host: Host, now: float) -> bool:
    """Potential-capacity check with a guard-blind upper bound first, so
    hopeless hosts skip the per-resident eligibility scan."""
    spot = host.spot_demand_vector()
    upper = (host.free_pes + spot[0], host.free_ram + spot[1],
             host.free_bw + spot[2], host.free_storage + spot[3])
    if not _fits_potential(vm, upper):
        return False
    return _fits_potential(vm, potential_free_vector(host, now))


class AllocationPolicy:
    """Base policy: subclasses define host filtering and ranking; the
    clearance fallback for on-demand requests is shared.

    ``place_vm`` is the one mutating entry point and must only run from the
    kernel loop; interruptions and the placement retry are issued through the
    ``context`` (normally the datacenter).
    """

    name = "base"

    def __init__(self):
        self.scorecard_sink: Callable[[PolicyScorecard], None] | None = None

    # -- subclass surface ---------------------------------------------------

    def find_host(self, vm: DynamicVm, hosts: list[Host], now: float) -> PlacementOutcome:
        raise NotImplementedError

    def clearance_candidates(self, vm: DynamicVm, hosts: list[Host],
                             now: float) -> list[Host]:
        raise NotImplementedError

    def select_clearance_host(self, vm: DynamicVm, candidates: list[Host],
                              now: float) -> PlacementOutcome:
        raise NotImplementedError

    # -- entry point ----------------------------------------------------------

    def place_vm(self, vm: DynamicVm, hosts: list[Host], now: float,
                 context=None) -> PlacementOutcome:
        outcome = self.find_host(vm, hosts, now)
        if outcome.host is not None:
            self._emit(outcome.scorecard)
            return outcome
        if vm.kind is VmKind.ON_DEMAND and context is not None:
            return self._clear_spot_capacity(vm, hosts, now, context)
        return PlacementOutcome()

    # -- clearance ------------------------------------------------------------

    def _clear_spot_capacity(self, vm, hosts, now, context) -> PlacementOutcome:
        candidates = self.clearance_candidates(vm, hosts, now)
        if not candidates:
            return PlacementOutcome()
        picked = self.select_clearance_host(vm, candidates, now)
        host = picked.host
        victims = self._pick_victims(vm, host, now)
        if victims is None:
            # The filter guaranteed a fit; reaching this means stale gauges.
            raise SimulationError(
                f"clearance host {host.host_id} cannot free enough capacity"
            )
        for victim in victims:
            if not context.interrupt_spot(victim, now):
                raise SimulationError(
                    f"guard rejected pre-filtered victim vm {victim.vm_id}"
                )
        retry_at = now + max(v.warning_time for v in victims) if victims else now
        context.schedule_retry(vm, retry_at)
        if picked.scorecard is not None:
            picked.scorecard.used_spot_clearance = True
        self._emit(picked.scorecard)
        return PlacementOutcome(interrupted=victims, retry_at=retry_at,
                                scorecard=picked.scorecard)

    def _pick_victims(self, vm, host: Host, now: float):
        """Walk the host's resident spot VMs in allocation order, skipping
        guard-protected ones, until the freed capacity suffices."""
        eligible = clearable_spot_vms(host, now)
        spec = vm.spec
        pes = float(host.free_pes)
        ram, bw, sto = host.free_ram, host.free_bw, host.free_storage
        victims = []
        for victim in eligible:
            if (pes >= spec.pe_count and ram >= spec.ram
                    and bw >= spec.bandwidth and sto >= spec.storage):
                break
            victims.append(victim)
            pes += victim.spec.pe_count
            ram += victim.spec.ram
            bw += victim.spec.bandwidth
            sto += victim.spec.storage
        if (pes >= spec.pe_count and ram >= spec.ram
                and bw >= spec.bandwidth and sto >= spec.storage):
            return victims
        return None

    def _emit(self, scorecard: PolicyScorecard | None) -> None:
        if scorecard is not None and self.scorecard_sink is not None:
            self.scorecard_sink(scorecard)


class FirstFitPolicy(AllocationPolicy):
    """Lowest-id host with room in all four dimensions; the clearance host
    is likewise the lowest-id host that could be freed up."""

    name = "first-fit"

    def find_host(self, vm, hosts, now):
        for host in hosts:
            if host.fits(vm):
                return PlacementOutcome(host=host)
        return PlacementOutcome()

    def clearance_candidates(self, vm, hosts, now):
        return [h for h in hosts if _clearance_fits(vm, h, now)]

    def select_clearance_host(self, vm, candidates, now):
        return PlacementOutcome(host=candidates[0])


class HlemPolicy(AllocationPolicy):
    """Filter hosts on capacity plus the CPU-difference rule, then pick the
    best entropy-weighted score."""

    name = "hlem"

    def __init__(self, params: HlemParams | None = None):
        super().__init__()
        self.params = params or HlemParams()
        self.params.validate()

    def _passes_cpu_filter(self, vm, host) -> bool:
        request = vm.spec.pe_count * vm.spec.mips / host.total_mips
        diff = rs_diff(request, host.cpu_utilization,
                       self.params.resource_carrying_factor)
        return diff > self.params.threshold

    def filter_hosts(self, vm, hosts, now, consider_spot_clearance=False):
        """Hosts that can take the VM. With clearance, capacity is what the
        host would have after deallocating its clearable spot VMs; the CPU
        difference rule always uses current utilization.

        Resuming a hibernated VM is a recovery action, not a placement-quality
        decision: it checks capacity only. Applying the CPU difference rule
        there starves hibernated VMs whenever the datacenter carries load.
        """
        cpu_filter = vm.state is not VmState.HIBERNATED
        out = []
        for host in hosts:
            if cpu_filter and not self._passes_cpu_filter(vm, host):
                continue
            if consider_spot_clearance:
                fits = _clearance_fits(vm, host, now)
            else:
                fits = host.fits(vm)
            if fits:
                out.append(host)
        return out

    def evaluate_hosts(self, candidates: list[Host]) -> CapacityMatrix:
        return evaluate_capacity_matrix(
            [h.host_id for h in candidates],
            [h.free_vector() for h in candidates],
        )

    def _rank(self, matrix: CapacityMatrix, candidates: list[Host]) -> list[float]:
        return matrix.scores

    def _choose(self, vm, candidates, used_clearance: bool) -> PlacementOutcome:
        matrix = self.evaluate_hosts(candidates)
        ranking = self._rank(matrix, candidates)
        index = select_best(matrix.host_ids, ranking)
        host = candidates[index]
        scorecard = PolicyScorecard(
            vm_id=vm.vm_id, candidate_ids=list(matrix.host_ids),
            matrix=matrix, chosen_host=host.host_id,
            used_spot_clearance=used_clearance,
        )
        return PlacementOutcome(host=host, scorecard=scorecard)

    def find_host(self, vm, hosts, now):
        candidates = self.filter_hosts(vm, hosts, now)
        if not candidates:
            return PlacementOutcome()
        return self._choose(vm, candidates, used_clearance=False)

    def clearance_candidates(self, vm, hosts, now):
        return self.filter_hosts(vm, hosts, now, consider_spot_clearance=True)

    def select_clearance_host(self, vm, candidates, now):
        return self._choose(vm, candidates, used_clearance=True)


class AdjustedHlemPolicy(HlemPolicy):
    """Entropy-weighted scoring with the spot-load adjustment: each score is
    multiplied by (1 + alpha * spot load), so with the default negative alpha
    spot-heavy hosts rank lower for every placement."""

    name = "hlem-adjusted"

    def _rank(self, matrix, candidates):
        loads = [spot_load(h, matrix.weights) for h in candidates]
        adjusted = [
            adjusted_score(s, l, self.params.alpha)
            for s, l in zip(matrix.scores, loads)
        ]
        matrix.spot_loads = loads
        matrix.adjusted_scores = adjusted
        return adjusted


POLICY_NAMES = ("first-fit", "hlem", "hlem-adjusted")


def make_policy(name: str, params: HlemParams | None = None) -> AllocationPolicy:
    if name == "first-fit":
        return FirstFitPolicy()
    if name == "hlem":
        return HlemPolicy(params)
    if name == "hlem-adjusted":
        return AdjustedHlemPolicy(params)
    raise SimulationError(f"unknown allocation policy: {name!r}")
