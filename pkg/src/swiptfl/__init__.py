"""Round-based simulator for a UAV-served federated learning network whose
devices split received downlink power between decoding and energy
harvesting."""

__version__ = "0.1.0"

from .channel import (
    DELTA_MAX,
    DELTA_MIN,
    ChannelRealization,
    LinkBudget,
    LinkParams,
    achievable_rate,
    downlink_budget,
    interference_power,
    received_power,
    sinr,
    tx_time,
    uplink_budget,
)
from .energy import (
    ComputeProfile,
    EnergyLedger,
    HarvestModel,
    compute_energy,
    downlink_energy,
    harvest_power,
    ledger,
    uplink_energy,
)
from .fl_core import (
    DivergenceError,
    LocalDataset,
    ModelVector,
    RoundSelection,
    TrainerConfig,
    aggregate,
    evaluate_metric,
    global_loss,
    local_loss,
    local_train,
    loss_gradient,
    make_federated_problem,
    run_round,
    select_rounds,
)
from .optimizer import (
    DeltaSolution,
    DeviceContext,
    PlacementSolution,
    optimize_delta_all,
    optimize_delta_device,
    place_uav,
)
from .scenario import (
    DataConfig,
    MonteCarloResult,
    RoundMetrics,
    Scenario,
    ScenarioConfig,
    TrialResult,
    build,
    rng_stream,
    run_monte_carlo,
    run_trial,
    sweep,
    with_override,
)
from .timing import RoundDelay, local_train_time, round_total, uav_aggregation_time

__all__ = [
    "DELTA_MAX",
    "DELTA_MIN",
    "ChannelRealization",
    "ComputeProfile",
    "DataConfig",
    "DeltaSolution",
    "DeviceContext",
    "DivergenceError",
    "EnergyLedger",
    "HarvestModel",
    "LinkBudget",
    "LinkParams",
    "LocalDataset",
    "ModelVector",
    "MonteCarloResult",
    "PlacementSolution",
    "RoundDelay",
    "RoundMetrics",
    "RoundSelection",
    "Scenario",
    "ScenarioConfig",
    "TrainerConfig",
    "TrialResult",
    "achievable_rate",
    "aggregate",
    "build",
    "compute_energy",
    "downlink_budget",
    "downlink_energy",
    "evaluate_metric",
    "global_loss",
    "harvest_power",
    "interference_power",
    "ledger",
    "local_loss",
    "local_train",
    "local_train_time",
    "loss_gradient",
    "make_federated_problem",
    "optimize_delta_all",
    "optimize_delta_device",
    "place_uav",
    "received_power",
    "rng_stream",
    "round_total",
    "run_monte_carlo",
    "run_round",
    "run_trial",
    "select_rounds",
    "sinr",
    "sweep",
    "tx_time",
    "uav_aggregation_time",
    "uplink_budget",
    "with_override",
]
