"""Deterministic federated-learning simulator comparing weight-distance
coalition aggregation against the FedAvg baseline."""

from .coalition import (
    CoalitionState,
    DegenerateWeights,
    GlobalModel,
    aggregate_global,
    assign_members,
    coalition_barycenters,
    coalition_round,
    elect_centers,
    init_centers,
)
from .data import (
    ClientDataset,
    IdxFormatError,
    LabeledDataset,
    PartitionPlan,
    load_idx,
    partition,
    synth_blobs,
)
from .fedavg import fedavg_aggregate
from .models import (
    ModelSpec,
    TrainConfig,
    TrainingDiverged,
    client_update,
    gradient,
    init_model,
    loss_and_accuracy,
    shape_descriptor,
)
from .paramvec import (
    ParamVector,
    ShapeDescriptor,
    as_paramvec,
    barycenter,
    euclidean_distance,
    flatten,
    unflatten,
)
from .rng import derive_seed, make_rng
from .simulator import (
    ExperimentAborted,
    ExperimentConfig,
    IdxSource,
    RoundRecord,
    StrategyConfig,
    SynthSource,
    compare_strategies,
    records_to_csv,
    results_to_json,
    run_experiment,
)

__version__ = "0.1.0"

__all__ = [
    "CoalitionState",
    "DegenerateWeights",
    "GlobalModel",
    "aggregate_global",
    "assign_members",
    "coalition_barycenters",
    "coalition_round",
    "elect_centers",
    "init_centers",
    "ClientDataset",
    "IdxFormatError",
    "LabeledDataset",
    "PartitionPlan",
    "load_idx",
    "partition",
    "synth_blobs",
    "fedavg_aggregate",
    "ModelSpec",
    "TrainConfig",
    "TrainingDiverged",
    "client_update",
    "gradient",
    "init_model",
    "loss_and_accuracy",
    "shape_descriptor",
    "ParamVector",
    "ShapeDescriptor",
    "as_paramvec",
    "barycenter",
    "euclidean_distance",
    "flatten",
    "unflatten",
    "derive_seed",
    "make_rng",
    "ExperimentAborted",
    "ExperimentConfig",
    "IdxSource",
    "RoundRecord",
    "StrategyConfig",
    "SynthSource",
    "compare_strategies",
    "records_to_csv",
    "results_to_json",
    "run_experiment",
]
