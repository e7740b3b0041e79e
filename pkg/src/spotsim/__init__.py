"""spotsim: a discrete-event simulator for cloud marketspaces.

Models on-demand and spot (preemptible) VMs over a datacenter of physical
hosts, including the full spot lifecycle (persistent requests, interruption
with warning, hibernation, resubmission, termination), and compares VM
allocation policies on interruption frequency and duration.
"""

from .allocation import (
    AdjustedHlemPolicy,
    CapacityMatrix,
    FirstFitPolicy,
    HlemParams,
    HlemPolicy,
    PolicyScorecard,
    adjusted_score,
    evaluate_capacity_matrix,
    make_policy,
    rs_diff,
    spot_load,
)
from .broker import DynamicBroker, SeriesSample
from .datacenter import Datacenter
from .kernel import (
    EngineConfig,
    EventTag,
    SimEntity,
    SimEvent,
    Simulation,
    SimulationError,
)
from .lifecycle import (
    DynamicVm,
    ExecutionHistory,
    ExecutionRecord,
    InterruptionBehavior,
    OnDemandInstance,
    SpotInstance,
    VmKind,
    VmState,
)
from .reporting import aggregate, export_tables
from .resources import (
    AllocationResult,
    Cloudlet,
    CloudletState,
    Host,
    VmSpec,
    update_vm_processing,
)
from .runner import RunResult, run_simulation
from .scenario import (
    ScenarioConfig,
    ScenarioError,
    compare_policies,
    generate_infrastructure,
    generate_workload,
    load_scenario,
    run_scenario,
)

__version__ = "0.1.0"
