"""Dynamic VM lifecycle: on-demand and spot instances.

Spot instances carry the timing parameters that govern interruptions
(minimum running time, warning time, hibernation time) and an execution
history of (host, start, stop) periods used for interruption metrics.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from statistics import fmean

from .kernel import SimulationError
from .resources import Cloudlet, VmSpec


class VmKind(Enum):
    ON_DEMAND = "ON_DEMAND"
    SPOT = "SPOT"


class VmState(Enum):
    WAITING = "WAITING"
    RUNNING = "RUNNING"
    WARNED = "WARNED"
    HIBERNATED = "HIBERNATED"
    TERMINATED = "TERMINATED"
    FINISHED = "FINISHED"
    FAILED = "FAILED"


class InterruptionBehavior(Enum):
    TERMINATE = "TERMINATE"
    HIBERNATE = "HIBERNATE"


# Legal transitions. A VM that completes all work during its warning window
# moves WARNED -> FINISHED; the pending deallocation is then stale and the
# signal is not counted as an interruption.
_LEGAL_TRANSITIONS = {
    VmState.WAITING: {VmState.RUNNING, VmState.FAILED},
    VmState.RUNNING: {VmState.WARNED, VmState.FINISHED},
    VmState.WARNED: {VmState.HIBERNATED, VmState.TERMINATED, VmState.FINISHED},
    VmState.HIBERNATED: {VmState.RUNNING, VmState.TERMINATED},
    VmState.TERMINATED: set(),
    VmState.FINISHED: set(),
    VmState.FAILED: set(),
}


@dataclass
class ExecutionRecord:
    """One execution period of a VM on a host. ``stop`` is None while the
    period is open; ``warned_at`` is set when an interruption is signalled."""

    host_id: int
    start: float
    stop: float | None = None
    warned_at: float | None = None
    close_reason: str | None = None


class ExecutionHistory:
    """Time-ordered, non-overlapping execution records with at most one
    open record (open record <=> VM currently RUNNING or WARNED)."""

    def __init__(self):
        self.records: list[ExecutionRecord] = []

    @property
    def open_record(self) -> ExecutionRecord | None:
        if self.records and self.records[-1].stop is None:
            return self.records[-1]
        return None

    def open(self, host_id: int, now: float) -> ExecutionRecord:
        if self.open_record is not None:
            raise SimulationError("cannot open a record while one is still open")
        if self.records and now < self.records[-1].stop - 1e-9:
            raise SimulationError("execution records must be time-ordered")
        record = ExecutionRecord(host_id=host_id, start=now)
        self.records.append(record)
        return record

    def close(self, now: float, reason: str) -> ExecutionRecord:
        record = self.open_record
        if record is None:
            raise SimulationError("no open execution record to close")
        if now < record.start - 1e-9:
            raise SimulationError("record cannot close before it starts")
        record.stop = now
        record.close_reason = reason
        return record

    def gaps(self) -> list[float]:
        """Idle gaps between consecutive records (interruption durations)."""
        out = []
        for prev, nxt in zip(self.records, self.records[1:]):
            if prev.stop is not None:
                out.append(nxt.start - prev.stop)
        return out

    def host_sequence(self) -> list[int]:
        return [r.host_id for r in self.records]

    def __len__(self) -> int:
        return len(self.records)


class DynamicVm:
    """VM request with lifecycle state. Persistent requests stay eligible
    for retries until their waiting time runs out; non-persistent requests
    fail on the first unsuccessful placement."""

    _KIND: VmKind | None = None

    def __init__(self, vm_id: int, spec: VmSpec | None = None, *,
                 persistent: bool = False, waiting_time: float | None = None,
                 submission_delay: float = 0.0):
        self.vm_id = vm_id
        self.spec = spec or VmSpec()
        self.spec.validate()
        self.kind = self._KIND
        self.persistent = persistent
        self.waiting_time = waiting_time
        self.submission_delay = submission_delay
        self.state = VmState.WAITING
        # (time, dispatch serial, state, reason) in transition order.
        self.state_history: list[tuple[float, int, VmState, str]] = []
        self.cloudlets: list[Cloudlet] = []
        self.history = ExecutionHistory()
        self.submitted_at: float | None = None
        self.first_submitted_at: float | None = None
        self.created_at: float | None = None
        self.destroyed_at: float | None = None
        self.current_host = None
        self.last_update = 0.0
        # Broker/datacenter bookkeeping.
        self.broker_list: str | None = None
        self.pending_retry_at: float | None = None
        self.next_refresh_at: float | None = None
        self.waiting_expire_scheduled = False

    @property
    def is_spot(self) -> bool:
        return self.kind is VmKind.SPOT

    def set_state(self, new_state: VmState, now: float, reason: str = "",
                  serial: int = 0) -> None:
        if new_state not in _LEGAL_TRANSITIONS[self.state]:
            raise SimulationError(
                f"illegal vm {self.vm_id} transition {self.state.value} -> "
                f"{new_state.value} ({reason or 'no reason'})"
            )
        self.state = new_state
        self.state_history.append((now, serial, new_state, reason))

    def record_initial_state(self, now: float, serial: int = 0) -> None:
        self.state_history.append((now, serial, self.state, "submitted"))

    def unfinished_cloudlets(self) -> list[Cloudlet]:
        return [c for c in self.cloudlets if not c.finished]

    def all_cloudlets_finished(self) -> bool:
        return all(c.finished for c in self.cloudlets)

    def state_sequence(self) -> list[VmState]:
        return [entry[2] for entry in self.state_history]

    def __repr__(self) -> str:
        kind = self.kind.value if self.kind else "?"
        return f"{type(self).__name__}({self.vm_id}, {kind}, {self.state.value})"


class OnDemandInstance(DynamicVm):
    _KIND = VmKind.ON_DEMAND


class SpotInstance(DynamicVm):
    _KIND = VmKind.SPOT

    def __init__(self, vm_id: int, spec: VmSpec | None = None, *,
                 persistent: bool = False, waiting_time: float | None = None,
                 submission_delay: float = 0.0,
                 interruption_behavior: InterruptionBehavior = InterruptionBehavior.HIBERNATE,
                 minimum_running_time: float = 0.0,
                 warning_time: float = 0.0,
                 hibernation_time: float | None = None):
        super().__init__(vm_id, spec, persistent=persistent,
                         waiting_time=waiting_time,
                         submission_delay=submission_delay)
        if minimum_running_time < 0 or warning_time < 0:
            raise SimulationError("spot timing parameters must be >= 0")
        if hibernation_time is not None and hibernation_time < 0:
            raise SimulationError("hibernation_time must be >= 0")
        self.interruption_behavior = interruption_behavior
        self.minimum_running_time = minimum_running_time
        self.warning_time = warning_time
        self.hibernation_time = hibernation_time
        self.interruption_count = 0
        self.hibernation_epoch = 0

    def average_interruption_time(self) -> float | None:
        """Mean gap between consecutive execution periods; None while the
        VM has been interrupted fewer than once (under two records)."""
        gaps = self.history.gaps()
        if not gaps:
            return None
        return fmean(gaps)

    def redeploy_count(self) -> int:
        return max(len(self.history) - 1, 0)
