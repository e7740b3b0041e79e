import random

import pytest

from spotsim import (
    Cloudlet,
    CloudletState,
    Host,
    OnDemandInstance,
    SimulationError,
    VmSpec,
    update_vm_processing,
)
from spotsim.resources import check_host_conservation


def vm(pes=2, ram=512, mips=1000, bw=1000, storage=10000, vm_id=0):
    return OnDemandInstance(vm_id, VmSpec(mips, pes, ram, bw, storage))


def test_allocate_decrements_all_gauges():
    host = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
    result = host.allocate(vm(pes=2, ram=512))
    assert result.success
    assert host.free_pes == 6
    assert host.free_ram == 16384 - 512
    assert host.free_bw == 10000 - 1000
    assert host.free_storage == 1000000 - 10000


def test_allocate_failure_names_binding_dimension():
    host = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
    host.free_ram = 256
    result = host.allocate(vm(pes=2, ram=512))
    assert not result.success
    assert result.binding_dimension == "ram"
    assert host.free_pes == 8  # host unchanged on failure


def test_two_allocations_fill_pe_capacity():
    host = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
    assert host.allocate(vm(pes=4, vm_id=0)).success
    assert host.allocate(vm(pes=4, vm_id=1)).success
    assert host.free_pes == 0
    assert not host.allocate(vm(pes=1, vm_id=2)).success


def test_deallocate_restores_initial_gauges():
    host = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
    machine = vm()
    host.allocate(machine)
    host.deallocate(machine)
    assert (host.free_pes, host.free_ram, host.free_bw, host.free_storage) == \
        (8, 16384, 10000, 1000000)
    check_host_conservation(host)


def test_deallocate_unknown_vm_is_fatal():
    host = Host(0, pe_count=8)
    with pytest.raises(SimulationError):
        host.deallocate(vm())


def test_deallocate_middle_vm_preserves_order():
    host = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
    a, b, c = vm(pes=1, vm_id=0), vm(pes=1, vm_id=1), vm(pes=1, vm_id=2)
    for machine in (a, b, c):
        host.allocate(machine)
    host.deallocate(b)
    assert host.resident_vms == [a, c]


def attach(machine, cloudlets, start=0.0):
    for cloudlet in cloudlets:
        cloudlet.bound_vm = machine.vm_id
        cloudlet.state = CloudletState.RUNNING
        machine.cloudlets.append(cloudlet)
    machine.last_update = start


def test_single_pe_cloudlet_finishes_at_length_over_mips():
    # 20000 MI at 1000 MIPS on one of two PEs -> 20 s.
    machine = vm(pes=2)
    cloudlet = Cloudlet(1, 20000, pes=1)
    attach(machine, [cloudlet])
    finished, eta = update_vm_processing(machine, 0.0, [1000.0, 1000.0])
    assert eta == pytest.approx(20.0)
    finished, eta = update_vm_processing(machine, 20.0, [1000.0, 1000.0])
    assert cloudlet.state is CloudletState.FINISHED
    assert finished == [cloudlet]
    assert eta is None


def test_finished_cloudlet_is_not_progressed_again():
    machine = vm(pes=1)
    cloudlet = Cloudlet(1, 1000, pes=1)
    attach(machine, [cloudlet])
    update_vm_processing(machine, 1.0, [1000.0])
    executed = cloudlet.executed
    update_vm_processing(machine, 5.0, [1000.0])
    assert cloudlet.executed == executed
    assert cloudlet.remaining == 0.0


def test_linear_depletion_to_pause_point():
    machine = vm(pes=2)
    cloudlet = Cloudlet(1, 20000, pes=1)
    attach(machine, [cloudlet])
    update_vm_processing(machine, 10.0, [1000.0, 1000.0])
    assert cloudlet.remaining == pytest.approx(10000.0)


def test_negative_delta_is_fatal():
    machine = vm(pes=1)
    attach(machine, [Cloudlet(1, 1000, pes=1)], start=5.0)
    with pytest.raises(SimulationError):
        update_vm_processing(machine, 4.0, [1000.0])


def test_oversubscribed_cloudlets_share_proportionally():
    # Requests 1000 + 2000 against 2000 MIPS capacity: scale 2/3.
    machine = vm(pes=2)
    c1, c2 = Cloudlet(1, 6000, pes=1), Cloudlet(2, 6000, pes=2)
    attach(machine, [c1, c2])
    update_vm_processing(machine, 3.0, [1000.0, 1000.0])
    assert c1.executed == pytest.approx(3 * 1000 * (2 / 3))
    assert c2.executed == pytest.approx(3 * 2000 * (2 / 3))


def test_work_conservation_against_step_oracle():
    """Stepping in random increments must match an independent step-by-step
    integration of the sharing rule within 1e-6 relative."""
    rng = random.Random(0)
    machine = vm(pes=2)
    lengths = [5000.0, 9000.0, 2500.0]
    pes = [1, 2, 1]
    cloudlets = [Cloudlet(i, l, pes=p) for i, (l, p) in enumerate(zip(lengths, pes))]
    attach(machine, cloudlets)
    oracle_remaining = list(lengths)
    now = 0.0
    for _ in range(200):
        dt = rng.uniform(0.05, 0.8)
        now += dt
        # independent oracle: recompute shares from its own remaining state
        requests = [1000.0 * min(p, 2) if rem > 0 else 0.0
                    for rem, p in zip(oracle_remaining, pes)]
        total = sum(requests)
        scale = min(1.0, 2000.0 / total) if total > 0 else 0.0
        for i, req in enumerate(requests):
            oracle_remaining[i] = max(0.0, oracle_remaining[i] - req * scale * dt)
        update_vm_processing(machine, now, [1000.0, 1000.0])
        for cloudlet, expected in zip(cloudlets, oracle_remaining):
            assert cloudlet.remaining == pytest.approx(expected, rel=1e-6, abs=1e-5)
    executed = sum(c.executed for c in cloudlets)
    assert executed == pytest.approx(sum(lengths) - sum(oracle_remaining), rel=1e-6)


def test_finish_time_projection_is_exact():
    machine = vm(pes=4, ram=1024)
    cloudlet = Cloudlet(1, 12345.0, pes=2)
    attach(machine, [cloudlet])
    _, eta = update_vm_processing(machine, 0.0, [1000.0] * 4)
    assert eta == 12345.0 / 2000.0


def test_spec_validation_rejects_nonpositive_fields():
    with pytest.raises(SimulationError):
        VmSpec(pe_count=0).validate()
    with pytest.raises(SimulationError):
        Host(0, pe_count=2, ram=-1)


def test_spot_used_vector_counts_only_spot_vms():
    from spotsim import SpotInstance
    host = Host(0, pe_count=8, ram=16384, bandwidth=10000, storage=1000000)
    host.allocate(SpotInstance(0, VmSpec(1000, 2, 512, 1000, 10000)))
    host.allocate(OnDemandInstance(1, VmSpec(1000, 2, 512, 1000, 10000)))
    cpu, ram, bw, storage = host.spot_used_vector()
    assert cpu == 2 * 1000
    assert ram == 512
    assert (bw, storage) == (1000, 10000)
