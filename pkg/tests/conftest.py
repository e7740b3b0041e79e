import csv
import random

import pytest

from spotsim import EngineConfig, make_policy, run_simulation


def run_sim(hosts, submissions, policy="first-fit", *, terminate_at=None,
            scheduling_interval=1.0, min_time=0.5, destruction_delay=0.0,
            shutdown_when_idle=False, debug=True, params=None):
    """Small-scenario harness used across the lifecycle tests."""
    config = EngineConfig(min_time_between_events=min_time,
                          terminate_at=terminate_at,
                          scheduling_interval=scheduling_interval)
    return run_simulation(
        hosts, submissions, make_policy(policy, params), config,
        vm_destruction_delay=destruction_delay,
        shutdown_when_idle=shutdown_when_idle, debug_checks=debug,
    )


def write_synthetic_trace(directory, *, machines=20, tasks=100,
                          unresolvable=2, seed=3, users=7,
                          duration_range=(2, 30), submit_step_us=250_000):
    """Create machine/task event files in the 2011 column layout. The first
    ``unresolvable`` tasks have SCHEDULE events without a machine id and no
    later event carrying one."""
    rng = random.Random(seed)
    machines_path = directory / "machine_events.csv"
    tasks_path = directory / "task_events.csv"
    with open(machines_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        for m in range(machines):
            writer.writerow([0, 1000 + m, 0, "platA", 0.5, 0.5])
    with open(tasks_path, "w", newline="") as handle:
        writer = csv.writer(handle)
        for t in range(tasks):
            job, index = 100 + t // 4, t % 4
            user = f"user{t % users}"
            submit = t * submit_step_us
            schedule = submit + 500_000
            finish = schedule + rng.randint(*duration_range) * 1_000_000
            machine = "" if t < unresolvable else str(1000 + (t % machines))
            base = ["", job, index]
            writer.writerow([submit, *base, "", 0, user, 0, 0, 0.125, 0.05, 0, 0])
            writer.writerow([schedule, *base, machine, 1, user, 0, 0, 0.125, 0.05, 0, 0])
            writer.writerow([finish, *base, machine, 4, user, 0, 0, 0.125, 0.05, 0, 0])
    return machines_path, tasks_path


@pytest.fixture
def synthetic_trace(tmp_path):
    return write_synthetic_trace(tmp_path)
