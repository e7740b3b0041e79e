"""Dynamic broker: submission, persistent requests and the spot lifecycle.

The broker keeps every VM in exactly one of four lists (waiting, exec,
resubmitting, finished) and owns all state transitions. Interruption of a
spot VM happens in two steps: a warning (the VM keeps executing, resources
stay reserved) and the actual deallocation warning_time later, which either
terminates or hibernates the instance. Hibernated and persistent-waiting
VMs sit in the resubmitting list and are retried on host deallocations and
on every scheduling tick.
"""

from __future__ import annotations

from dataclasses import dataclass

from .datacenter import Datacenter
from .kernel import BROADCAST, ENGINE, EventTag, SimEntity, SimEvent, SimulationError
from .lifecycle import (
    DynamicVm,
    InterruptionBehavior,
    SpotInstance,
    VmKind,
    VmState,
)
from .resources import Cloudlet, CloudletState


@dataclass
class SeriesSample:
    """Counts of VM activity taken at one scheduling tick."""

    time: float
    active_on_demand: int
    active_spot: int
    hibernated: int
    waiting: int
    serial: int = 0


_ACTIVE = (VmState.RUNNING, VmState.WARNED)


class DynamicBroker(SimEntity):
    def __init__(self, datacenter: Datacenter, *, vm_destruction_delay: float = 0.0,
                 shutdown_when_idle: bool = False):
        self.datacenter = datacenter
        datacenter.broker = self
        self.vm_destruction_delay = vm_destruction_delay
        self.shutdown_when_idle = shutdown_when_idle
        self.waiting_list: list[DynamicVm] = []
        self.exec_list: list[DynamicVm] = []
        self.resubmitting_list: list[DynamicVm] = []
        self.finished_list: list[DynamicVm] = []
        self.vms: dict[int, DynamicVm] = {}
        self.series: list[SeriesSample] = []
        self._shutdown_sent = False

    # -- list bookkeeping ---------------------------------------------------

    _LISTS = {
        "waiting": "waiting_list",
        "exec": "exec_list",
        "resubmitting": "resubmitting_list",
        "finished": "finished_list",
    }

    def _move(self, vm: DynamicVm, target: str) -> None:
        if vm.broker_list == target:
            return
        if vm.broker_list is not None:
            getattr(self, self._LISTS[vm.broker_list]).remove(vm)
        getattr(self, self._LISTS[target]).append(vm)
        vm.broker_list = target

    def has_pending_work(self) -> bool:
        return bool(self.waiting_list or self.exec_list or self.resubmitting_list)

    @property
    def _serial(self) -> int:
        return self.simulation.dispatch_serial if self.simulation else 0

    # -- submission -----------------------------------------------------------

    def submit_vm(self, vm: DynamicVm, cloudlets: list[Cloudlet] = ()) -> None:
        if self.simulation is None:
            raise SimulationError("broker must be registered before submitting")
        if vm.vm_id in self.vms:
            raise SimulationError(f"vm {vm.vm_id} was already submitted")
        for cloudlet in cloudlets:
            self._bind_cloudlet(cloudlet, vm)
        now = self.simulation.clock
        vm.submitted_at = now
        vm.record_initial_state(now, self._serial)
        self.vms[vm.vm_id] = vm
        self._move(vm, "waiting")
        self.simulation.schedule(SimEvent(
            now + vm.submission_delay, EventTag.VM_CREATE,
            self.entity_id, self.datacenter.entity_id, vm,
        ))

    def submit_cloudlet(self, cloudlet: Cloudlet) -> None:
        """Late submission of work to an already submitted VM."""
        if cloudlet.bound_vm is None or cloudlet.bound_vm not in self.vms:
            raise SimulationError("cloudlet must be bound to a submitted vm")
        self.simulation.send(self.entity_id, self.entity_id, 0.0,
                             EventTag.CLOUDLET_SUBMIT, cloudlet)

    def _bind_cloudlet(self, cloudlet: Cloudlet, vm: DynamicVm) -> None:
        if cloudlet.bound_vm not in (None, vm.vm_id):
            raise SimulationError(
                f"cloudlet {cloudlet.cloudlet_id} is bound to vm "
                f"{cloudlet.bound_vm}, not vm {vm.vm_id}"
            )
        cloudlet.bound_vm = vm.vm_id
        if cloudlet not in vm.cloudlets:
            vm.cloudlets.append(cloudlet)

    # -- creation results -------------------------------------------------------

    def handle_creation_result(self, vm: DynamicVm, success: bool, now: float) -> None:
        if success:
            self._start_running(vm, now, reason="created")
            return
        if vm.persistent:
            self._move(vm, "resubmitting")
            self._ensure_waiting_expiry(vm)
        else:
            self._fail(vm, now, "creation failed")

    def note_pending_retry(self, vm: DynamicVm, retry_at: float, now: float) -> None:
        """Capacity is being cleared for this VM; a retry event is queued."""
        vm.pending_retry_at = retry_at
        if vm.persistent:
            self._ensure_waiting_expiry(vm)

    def _ensure_waiting_expiry(self, vm: DynamicVm) -> None:
        # Expiry is measured from the first submission, not the last retry.
        if vm.waiting_time is None or vm.waiting_expire_scheduled:
            return
        vm.waiting_expire_scheduled = True
        self.simulation.schedule(SimEvent(
            vm.first_submitted_at + vm.waiting_time, EventTag.WAITING_EXPIRE,
            self.entity_id, self.entity_id, vm,
        ))

    def _start_running(self, vm: DynamicVm, now: float, reason: str) -> None:
        vm.set_state(VmState.RUNNING, now, reason, self._serial)
        if vm.created_at is None:
            vm.created_at = now
        vm.history.open(vm.current_host.host_id, now)
        self._move(vm, "exec")
        self.datacenter.start_cloudlets(vm, now)
        if vm.cloudlets and vm.all_cloudlets_finished():
            # Nothing left to run (work completed before an interruption
            # landed); destroy after the configured delay.
            self._schedule_destroy(vm, now)

    def _fail(self, vm: DynamicVm, now: float, reason: str) -> None:
        vm.set_state(VmState.FAILED, now, reason, self._serial)
        vm.destroyed_at = now
        self._move(vm, "finished")

    # -- spot interruption --------------------------------------------------------

    def interrupt_spot(self, vm: SpotInstance, now: float) -> bool:
        """Signal a capacity interruption. Returns False while the VM is
        protected by its minimum running time; otherwise the VM is WARNED and
        deallocation is scheduled warning_time later."""
        if not vm.is_spot:
            raise SimulationError(f"vm {vm.vm_id} is not a spot instance")
        if vm.state is not VmState.RUNNING:
            raise SimulationError(
                f"cannot interrupt vm {vm.vm_id} in state {vm.state.value}"
            )
        record = vm.history.open_record
        if now - record.start < vm.minimum_running_time - 1e-9:
            return False
        vm.set_state(VmState.WARNED, now, "interrupt signal", self._serial)
        record.warned_at = now
        self.simulation.schedule(SimEvent(
            now, EventTag.SPOT_INTERRUPT_WARNING,
            self.entity_id, self.entity_id, vm,
        ))
        self.simulation.schedule(SimEvent(
            now + vm.warning_time, EventTag.SPOT_DEALLOCATE,
            self.entity_id, self.entity_id, vm,
        ))
        return True

    def execute_interruption(self, vm: SpotInstance, now: float) -> None:
        """Deallocate a warned spot VM: terminate it or hibernate it with its
        cloudlets paused and progress preserved."""
        if vm.state is not VmState.WARNED:
            raise SimulationError(
                f"cannot deallocate vm {vm.vm_id} in state {vm.state.value}"
            )
        self.datacenter.refresh_vm(vm, now)
        vm.history.close(now, "interrupted")
        self.datacenter.detach_vm(vm)
        vm.interruption_count += 1
        remaining = vm.unfinished_cloudlets()
        if vm.interruption_behavior is InterruptionBehavior.TERMINATE:
            for cloudlet in remaining:
                cloudlet.state = CloudletState.QUEUED  # abandoned, keeps remaining MI
            vm.set_state(VmState.TERMINATED, now, "interruption", self._serial)
            vm.destroyed_at = now
            self._move(vm, "finished")
        else:
            for cloudlet in remaining:
                cloudlet.state = CloudletState.PAUSED
            vm.set_state(VmState.HIBERNATED, now, "interruption", self._serial)
            self._move(vm, "resubmitting")
            vm.hibernation_epoch += 1
            if vm.hibernation_time is not None:
                self.simulation.schedule(SimEvent(
                    now + vm.hibernation_time, EventTag.HIBERNATION_EXPIRE,
                    self.entity_id, self.entity_id,
                    (vm, vm.hibernation_epoch),
                ))
        # The freed capacity is reserved for the on-demand retry that caused
        # the interruption, so no resubmission attempt happens here.

    # -- resubmission ---------------------------------------------------------------

    def try_resubmit(self, trigger: str, now: float) -> int:
        """Retry VMs in the resubmitting list in insertion order. Partial
        progress is allowed: a failed attempt does not block later, smaller
        VMs from resuming."""
        resumed = 0
        for vm in list(self.resubmitting_list):
            if vm.pending_retry_at is not None:
                continue  # capacity already being cleared for this VM
            if vm.state not in (VmState.WAITING, VmState.HIBERNATED):
                continue
            outcome = self.datacenter.attempt_placement(vm, now)
            if outcome.host is not None:
                reason = "resumed" if vm.state is VmState.HIBERNATED else "created"
                self._start_running(vm, now, reason=reason)
                resumed += 1
            elif outcome.interrupted:
                self.note_pending_retry(vm, outcome.retry_at, now)
        return resumed

    # -- completion -------------------------------------------------------------------

    def on_cloudlet_finished(self, cloudlet: Cloudlet, now: float) -> None:
        vm = self.vms.get(cloudlet.bound_vm)
        if vm is None:
            raise SimulationError(
                f"finish notification for unknown vm {cloudlet.bound_vm}"
            )
        if vm.state in _ACTIVE and vm.all_cloudlets_finished():
            self._schedule_destroy(vm, now)

    def _schedule_destroy(self, vm: DynamicVm, now: float) -> None:
        self.simulation.schedule(SimEvent(
            now + self.vm_destruction_delay, EventTag.VM_DESTROY,
            self.entity_id, self.datacenter.entity_id, vm,
        ))

    def complete_vm(self, vm: DynamicVm, now: float) -> None:
        """Close out a VM whose work is done (called at VM_DESTROY)."""
        self.datacenter.refresh_vm(vm, now)
        vm.history.close(now, "finished")
        self.datacenter.detach_vm(vm)
        vm.set_state(VmState.FINISHED, now, "all cloudlets complete", self._serial)
        vm.destroyed_at = now
        self._move(vm, "finished")
        self.try_resubmit("host_deallocation", now)

    # -- event handling ------------------------------------------------------------------

    def process_event(self, event: SimEvent) -> None:
        now = self.simulation.clock
        tag = event.tag
        if tag is EventTag.SCHEDULING_TICK:
            if event.destination == BROADCAST:
                self._on_tick(now)
        elif tag is EventTag.CLOUDLET_FINISH:
            self.on_cloudlet_finished(event.payload, now)
        elif tag is EventTag.SPOT_DEALLOCATE:
            vm = event.payload
            if vm.state is VmState.WARNED:
                self.execute_interruption(vm, now)
        elif tag is EventTag.SPOT_INTERRUPT_WARNING:
            pass  # marker event; the state change happened at signal time
        elif tag is EventTag.HIBERNATION_EXPIRE:
            vm, epoch = event.payload
            if vm.state is VmState.HIBERNATED and vm.hibernation_epoch == epoch:
                vm.set_state(VmState.TERMINATED, now, "hibernation expired",
                             self._serial)
                vm.destroyed_at = now
                self._move(vm, "finished")
        elif tag is EventTag.WAITING_EXPIRE:
            vm = event.payload
            if vm.state is VmState.WAITING:
                self._fail(vm, now, "waiting time expired")
        elif tag is EventTag.CLOUDLET_SUBMIT:
            self._handle_cloudlet_submit(event.payload, now)

    def _handle_cloudlet_submit(self, cloudlet: Cloudlet, now: float) -> None:
        vm = self.vms.get(cloudlet.bound_vm)
        if vm is None:
            raise SimulationError("cloudlet submitted for unknown vm")
        self._bind_cloudlet(cloudlet, vm)
        if vm.state in _ACTIVE:
            self.datacenter.start_cloudlets(vm, now)

    def _on_tick(self, now: float) -> None:
        self.try_resubmit("scheduling_tick", now)
        self._sample_series(now)
        if (self.shutdown_when_idle and not self._shutdown_sent and self.vms
                and not self.has_pending_work()):
            self._shutdown_sent = True
            self.simulation.schedule(SimEvent(
                now, EventTag.END_OF_SIMULATION, self.entity_id, ENGINE,
            ))

    def _sample_series(self, now: float) -> None:
        active_od = active_spot = hibernated = waiting = 0
        for vm in self.vms.values():
            if vm.state in _ACTIVE:
                if vm.kind is VmKind.SPOT:
                    active_spot += 1
                else:
                    active_od += 1
            elif vm.state is VmState.HIBERNATED:
                hibernated += 1
            elif vm.state is VmState.WAITING:
                waiting += 1
        self.series.append(SeriesSample(
            time=now, active_on_demand=active_od, active_spot=active_spot,
            hibernated=hibernated, waiting=waiting, serial=self._serial,
        ))
