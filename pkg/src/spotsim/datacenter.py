"""Datacenter entity: owns the hosts, drives cloudlet execution and runs
the allocation policy for creation requests and retries.

CPU scheduling is space-shared across VMs (a VM admits only onto whole
free PEs) and time-shared among the cloudlets inside a VM. Completion
times are hit exactly by self-scheduling a refresh at the earliest
projected finish, independent of the scheduling-tick grid.
"""

from __future__ import annotations

from .allocation import AllocationPolicy, PlacementOutcome
from .kernel import BROADCAST, EventTag, SimEntity, SimEvent, SimulationError
from .lifecycle import DynamicVm, VmState
from .resources import Host, update_vm_processing

_EXECUTING = (VmState.RUNNING, VmState.WARNED)


class Datacenter(SimEntity):
    def __init__(self, hosts: list[Host], policy: AllocationPolicy):
        ids = [h.host_id for h in hosts]
        if len(set(ids)) != len(ids):
            raise SimulationError("host ids must be unique")
        self.hosts = sorted(hosts, key=lambda h: h.host_id)
        self.policy = policy
        self.broker = None
        self.placed_vms: list[DynamicVm] = []

    # -- event handling -----------------------------------------------------

    def process_event(self, event: SimEvent) -> None:
        now = self.simulation.clock
        tag = event.tag
        if tag in (EventTag.VM_CREATE, EventTag.VM_CREATE_RETRY):
            self._handle_create(event.payload, now)
        elif tag is EventTag.VM_DESTROY:
            self._handle_destroy(event.payload, now)
        elif tag is EventTag.SCHEDULING_TICK:
            if event.destination == BROADCAST:
                self.refresh_all(now)
            else:
                self.refresh_vm(event.payload, now)
        # Other tags are not addressed to the datacenter.

    def _handle_create(self, vm: DynamicVm, now: float) -> None:
        vm.pending_retry_at = None
        if vm.first_submitted_at is None:
            vm.first_submitted_at = now
        if vm.state is not VmState.WAITING:
            return  # request expired or was fulfilled meanwhile
        outcome = self.attempt_placement(vm, now)
        if outcome.host is not None:
            self.broker.handle_creation_result(vm, True, now)
        elif outcome.interrupted:
            self.broker.note_pending_retry(vm, outcome.retry_at, now)
        else:
            self.broker.handle_creation_result(vm, False, now)

    def _handle_destroy(self, vm: DynamicVm, now: float) -> None:
        # Stale destroy events are possible when the VM was interrupted or
        # received more work during the destruction delay.
        if vm.current_host is None or vm.state not in _EXECUTING:
            return
        if not vm.all_cloudlets_finished():
            return
        self.broker.complete_vm(vm, now)

    # -- placement ------------------------------------------------------------

    def attempt_placement(self, vm: DynamicVm, now: float) -> PlacementOutcome:
        """Ask the policy for a host; allocate immediately on success. The
        clearance path (spot interruptions plus a retry event) runs through
        the context callbacks below."""
        outcome = self.policy.place_vm(vm, self.hosts, now, context=self)
        if outcome.host is not None:
            self.attach_vm(vm, outcome.host, now)
        return outcome

    # Context surface used by the policies' clearance path.
    def interrupt_spot(self, vm, now: float) -> bool:
        return self.broker.interrupt_spot(vm, now)

    def schedule_retry(self, vm: DynamicVm, at: float) -> None:
        self.simulation.schedule(
            SimEvent(at, EventTag.VM_CREATE_RETRY, self.entity_id, self.entity_id, vm)
        )

    # -- vm attachment ----------------------------------------------------------

    def attach_vm(self, vm: DynamicVm, host: Host, now: float) -> None:
        result = host.allocate(vm)
        if not result.success:
            raise SimulationError(
                f"policy placed vm {vm.vm_id} on host {host.host_id} without "
                f"capacity ({result.binding_dimension})"
            )
        vm.current_host = host
        vm.last_update = now
        self.placed_vms.append(vm)

    def detach_vm(self, vm: DynamicVm) -> None:
        if vm.current_host is None:
            raise SimulationError(f"vm {vm.vm_id} is not placed")
        vm.current_host.deallocate(vm)
        vm.current_host = None
        vm.next_refresh_at = None
        self.placed_vms.remove(vm)

    # -- processing ---------------------------------------------------------------

    def refresh_all(self, now: float) -> None:
        for vm in list(self.placed_vms):
            self.refresh_vm(vm, now)

    def refresh_vm(self, vm: DynamicVm, now: float) -> None:
        """Advance the VM's cloudlets to ``now``, emit finish notifications
        and keep a refresh event pending at the next projected completion."""
        if vm.current_host is None or vm.state not in _EXECUTING:
            return
        allocated = [vm.spec.mips] * vm.spec.pe_count
        finished, next_completion = update_vm_processing(vm, now, allocated)
        for cloudlet in finished:
            self.simulation.schedule(SimEvent(
                now, EventTag.CLOUDLET_FINISH,
                self.entity_id, self.broker.entity_id, cloudlet,
            ))
        if next_completion is not None:
            self._schedule_refresh(vm, next_completion, now)

    def _schedule_refresh(self, vm: DynamicVm, at: float, now: float) -> None:
        pending = vm.next_refresh_at
        if pending is not None and now < pending <= at + 1e-9:
            return  # an earlier or equal refresh is already queued
        vm.next_refresh_at = at
        self.simulation.schedule(SimEvent(
            at, EventTag.SCHEDULING_TICK, self.entity_id, self.entity_id, vm,
        ))

    def start_cloudlets(self, vm: DynamicVm, now: float) -> None:
        """Move the VM's runnable cloudlets to RUNNING and project completion."""
        from .resources import CloudletState

        for cloudlet in vm.cloudlets:
            if cloudlet.state in (CloudletState.QUEUED, CloudletState.PAUSED):
                cloudlet.state = CloudletState.RUNNING
                if cloudlet.start_time is None:
                    cloudlet.start_time = now
        vm.last_update = now
        self.refresh_vm(vm, now)
