"""Experiment orchestration: rounds, strategies, records, serialization.

A run is fully determined by its config.  All sub-seeds derive from the
master seed via ``rng.derive_seed(master, purpose_label, ...)`` with the
labels "model-init", "shuffle", "partition", "synth-train", "synth-test"
and "init-centers"; local shuffles are further scoped by (round, client)
inside ``models.client_update``.  Client updates within a round may run
on a thread pool; every reduction afterwards scans clients in ascending
id order, so the records are identical either way.

Wall-clock time is kept on the in-memory records and in the JSON export
for humans, but the CSV cell stays empty: the CSV is the deterministic
artifact compared byte-for-byte across runs, and timing is environment
noise.
"""

from __future__ import annotations

import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from typing import Iterable

from .coalition import (
    CoalitionState,
    DegenerateWeights,
    coalition_round,
    init_centers,
)
from .data import (
    ClientDataset,
    LabeledDataset,
    PartitionPlan,
    load_idx,
    partition,
    synth_blobs,
)
from .fedavg import WEIGHTINGS, fedavg_aggregate
from .models import (
    ModelSpec,
    TrainConfig,
    TrainingDiverged,
    client_update,
    init_model,
    loss_and_accuracy,
)
from .paramvec import ParamVector, euclidean_distance
from .rng import derive_seed

log = logging.getLogger(__name__)

CSV_HEADER = "round,test_accuracy,test_loss,strategy,coalition_sizes,center_ids,wall_ms"

STRATEGY_KINDS = ("coalition", "fedavg")


class ExperimentAborted(RuntimeError):
    """Training diverged mid-run; ``records`` holds the rounds finished so far."""

    def __init__(self, records: list["RoundRecord"], cause: Exception):
        super().__init__(f"experiment aborted: {cause}")
        self.records = records
        self.cause = cause


@dataclass(frozen=True)
class StrategyConfig:
    """Aggregation strategy: coalition formation (with K coalitions) or
    the FedAvg baseline (uniform or size-weighted mean)."""

    kind: str
    coalitions: int = 3
    weighting: str = "uniform"

    def __post_init__(self) -> None:
        if self.kind not in STRATEGY_KINDS:
            raise ValueError(f"unknown strategy {self.kind!r} (known: {STRATEGY_KINDS})")
        if self.kind == "coalition" and self.coalitions < 2:
            raise ValueError(f"coalition strategy needs >= 2 coalitions, got {self.coalitions}")
        if self.kind == "fedavg" and self.weighting not in WEIGHTINGS:
            raise ValueError(f"unknown weighting {self.weighting!r} (known: {WEIGHTINGS})")

    @property
    def label(self) -> str:
        return self.kind


@dataclass(frozen=True)
class SynthSource:
    """Synthetic Gaussian-blob dataset parameters.  Train and test sets
    are drawn from the same geometry with independent sub-seeds."""

    class_count: int = 3
    per_class: int = 200
    test_per_class: int = 100
    input_dim: int = 4
    separation: float = 5.0
    train_seed: int | None = None
    test_seed: int | None = None


@dataclass(frozen=True)
class IdxSource:
    """Paths to IDX image/label file pairs for train and test."""

    train_images: str
    train_labels: str
    test_images: str
    test_labels: str


@dataclass(frozen=True)
class ExperimentConfig:
    """Full specification of one run."""

    master_seed: int
    rounds: int
    model: ModelSpec
    source: SynthSource | IdxSource
    plan: PartitionPlan
    train: TrainConfig = field(default_factory=TrainConfig)
    strategy: StrategyConfig = field(default_factory=lambda: StrategyConfig("coalition"))
    client_count: int = 10
    eval_every: int = 1
    workers: int = 1
    snapshot_weights: bool = False

    def __post_init__(self) -> None:
        if self.rounds < 1:
            raise ValueError(f"rounds must be >= 1, got {self.rounds}")
        if self.client_count < 1:
            raise ValueError(f"client_count must be >= 1, got {self.client_count}")
        if self.eval_every < 1:
            raise ValueError(f"eval_every must be >= 1, got {self.eval_every}")
        if self.workers < 1:
            raise ValueError(f"workers must be >= 1, got {self.workers}")
        if self.strategy.kind == "coalition" and self.client_count < self.strategy.coalitions:
            raise ValueError(
                f"client_count {self.client_count} < coalitions {self.strategy.coalitions}"
            )
        if self.plan.client_count != self.client_count:
            raise ValueError(
                f"partition plan is for {self.plan.client_count} clients, "
                f"experiment has {self.client_count}"
            )


@dataclass(frozen=True, eq=False)
class RoundRecord:
    """Metrics for one evaluated communication round."""

    round: int
    strategy: str
    test_accuracy: float
    test_loss: float
    train_losses: tuple[float, ...]
    coalition_sizes: tuple[int, ...] | None = None
    center_ids: tuple[int, ...] | None = None
    assignment_centers: tuple[int, ...] | None = None
    barycenter_distances: tuple[float, ...] | None = None
    wall_ms: float = 0.0
    weights_before: dict[int, ParamVector] | None = None


def resolve_config(cfg: ExperimentConfig) -> ExperimentConfig:
    """Fill every unset sub-seed from the master seed.  Explicit seeds are
    kept as given."""
    model = cfg.model
    if model.init_seed is None:
        model = replace(model, init_seed=derive_seed(cfg.master_seed, "model-init"))
    train = cfg.train
    if train.shuffle_seed is None:
        train = replace(train, shuffle_seed=derive_seed(cfg.master_seed, "shuffle"))
    plan = cfg.plan
    if plan.seed is None:
        plan = replace(plan, seed=derive_seed(cfg.master_seed, "partition"))
    source = cfg.source
    if isinstance(source, SynthSource):
        if source.train_seed is None:
            source = replace(source, train_seed=derive_seed(cfg.master_seed, "synth-train"))
        if source.test_seed is None:
            source = replace(source, test_seed=derive_seed(cfg.master_seed, "synth-test"))
    return replace(cfg, model=model, train=train, plan=plan, source=source)


def build_datasets(cfg: ExperimentConfig) -> tuple[LabeledDataset, LabeledDataset]:
    """Materialize (train, test) datasets from the config's source."""
    source = cfg.source
    if isinstance(source, IdxSource):
        train = load_idx(source.train_images, source.train_labels)
        test = load_idx(source.test_images, source.test_labels)
        return train, test
    train = synth_blobs(
        source.class_count,
        source.per_class,
        source.input_dim,
        source.separation,
        source.train_seed,
    )
    test = synth_blobs(
        source.class_count,
        source.test_per_class,
        source.input_dim,
        source.separation,
        source.test_seed,
    )
    return train, test


def _update_all(
    cfg: ExperimentConfig,
    theta: ParamVector,
    clients: list[ClientDataset],
    round_index: int,
) -> dict[int, ParamVector]:
    """Run one local update per client, sequentially or on a thread pool.

    Per-client results are independent of scheduling; the returned map is
    always assembled in ascending client-id order.
    """
    if cfg.workers > 1:
        with ThreadPoolExecutor(max_workers=cfg.workers) as pool:
            futures = {
                c.client_id: pool.submit(client_update, theta, cfg.model, c, cfg.train, round_index)
                for c in clients
            }
            return {cid: futures[cid].result() for cid in sorted(futures)}
    return {
        c.client_id: client_update(theta, cfg.model, c, cfg.train, round_index)
        for c in sorted(clients, key=lambda c: c.client_id)
    }


def _pairwise_distances(vectors: tuple[ParamVector, ...]) -> tuple[float, ...]:
    out = []
    for i in range(len(vectors)):
        for j in range(i + 1, len(vectors)):
            out.append(euclidean_distance(vectors[i], vectors[j]))
    return tuple(out)


def _bootstrap_centers(
    cfg: ExperimentConfig, weights: dict[int, ParamVector]
) -> tuple[int, ...]:
    """Initial centers from the post-round-0 weights; when the whole
    population is weight-identical (a degenerate but legal fixed point),
    fall back to the K lowest client ids so the run can proceed."""
    try:
        return init_centers(
            weights, cfg.strategy.coalitions, derive_seed(cfg.master_seed, "init-centers")
        )
    except DegenerateWeights:
        fallback = tuple(sorted(weights)[: cfg.strategy.coalitions])
        log.warning("identical client weights at bootstrap; using centers %s", fallback)
        return fallback


def run_experiment(
    cfg: ExperimentConfig,
    clients_override: list[ClientDataset] | None = None,
    test_override: LabeledDataset | None = None,
) -> list[RoundRecord]:
    """Execute a full federated run and return one record per evaluated round.

    Round 0 trains every client on the freshly initialized global model;
    each later round aggregates (coalition formation or FedAvg), evaluates
    the new global weights on the test set, and trains clients on them.
    The two override arguments let tests inject hand-built shards in place
    of the config's dataset/partition.
    """
    cfg = resolve_config(cfg)
    if clients_override is not None:
        if test_override is None:
            raise ValueError("clients_override requires test_override")
        clients, test_data = clients_override, test_override
        if len(clients) != cfg.client_count:
            raise ValueError(f"expected {cfg.client_count} clients, got {len(clients)}")
    else:
        train_data, test_data = build_datasets(cfg)
        clients = partition(train_data, cfg.plan)

    records: list[RoundRecord] = []
    try:
        theta = init_model(cfg.model)
        weights = _update_all(cfg, theta, clients, round_index=0)
        state: CoalitionState | None = None
        if cfg.strategy.kind == "coalition":
            state = CoalitionState(round=0, centers=_bootstrap_centers(cfg, weights))

        for round_index in range(1, cfg.rounds + 1):
            t0 = time.perf_counter()
            sizes: tuple[int, ...] | None = None
            elected: tuple[int, ...] | None = None
            assignment_centers: tuple[int, ...] | None = None
            bary_dists: tuple[float, ...] | None = None
            snapshot = None
            if cfg.snapshot_weights:
                snapshot = {cid: w.copy() for cid, w in weights.items()}

            if cfg.strategy.kind == "coalition":
                assignment_centers = state.centers
                state, global_model = coalition_round(weights, state)
                theta = global_model.theta
                sizes = tuple(len(group) for group in state.members)
                elected = state.centers
                bary_dists = _pairwise_distances(state.barycenters)
            else:
                theta = fedavg_aggregate(
                    weights, {c.client_id: len(c) for c in clients}, cfg.strategy.weighting
                )

            weights = _update_all(cfg, theta, clients, round_index)
            wall_ms = (time.perf_counter() - t0) * 1000.0

            if round_index % cfg.eval_every == 0 or round_index == cfg.rounds:
                test_loss, test_acc = loss_and_accuracy(theta, cfg.model, test_data)
                train_losses = tuple(
                    loss_and_accuracy(weights[c.client_id], cfg.model, c)[0]
                    for c in sorted(clients, key=lambda c: c.client_id)
                )
                records.append(
                    RoundRecord(
                        round=round_index,
                        strategy=cfg.strategy.label,
                        test_accuracy=test_acc,
                        test_loss=test_loss,
                        train_losses=train_losses,
                        coalition_sizes=sizes,
                        center_ids=elected,
                        assignment_centers=assignment_centers,
                        barycenter_distances=bary_dists,
                        wall_ms=wall_ms,
                        weights_before=snapshot,
                    )
                )
    except TrainingDiverged as exc:
        raise ExperimentAborted(records, exc) from exc
    return records


def compare_strategies(
    cfg_base: ExperimentConfig, strategies: list[StrategyConfig]
) -> list[tuple[StrategyConfig, list[RoundRecord]]]:
    """Run each strategy on identical data, partitions and initial weights.

    Everything except the aggregation rule is shared: sub-seeds never
    depend on the strategy, so the per-round records align 1:1.
    """
    if not strategies:
        raise ValueError("no strategies to compare")
    runs = []
    for strategy in strategies:
        cfg = replace(cfg_base, strategy=strategy)
        runs.append((strategy, run_experiment(cfg)))
    return runs


def _fmt(value: float | int | None) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    return str(value)


def records_to_csv(records: Iterable[RoundRecord]) -> str:
    """Render records as the stable CSV schema.

    List-valued cells are semicolon-joined; coalition columns are empty
    for FedAvg rows; the wall_ms column is part of the schema but left
    empty so the file is byte-stable across runs.
    """
    lines = [CSV_HEADER]
    for rec in records:
        sizes = ";".join(str(s) for s in rec.coalition_sizes) if rec.coalition_sizes else ""
        centers = ";".join(str(c) for c in rec.center_ids) if rec.center_ids else ""
        lines.append(
            ",".join(
                [
                    str(rec.round),
                    _fmt(rec.test_accuracy),
                    _fmt(rec.test_loss),
                    rec.strategy,
                    sizes,
                    centers,
                    "",
                ]
            )
        )
    return "\n".join(lines) + "\n"


def _config_to_jsonable(cfg: ExperimentConfig) -> dict:
    def convert(obj):
        if isinstance(obj, (ModelSpec, TrainConfig, PartitionPlan, StrategyConfig, SynthSource, IdxSource)):
            return {k: convert(v) for k, v in vars(obj).items()}
        if isinstance(obj, tuple):
            return [convert(v) for v in obj]
        return obj

    out = {k: convert(v) for k, v in vars(cfg).items()}
    out["source_kind"] = "idx" if isinstance(cfg.source, IdxSource) else "synth"
    return out


def _record_to_jsonable(rec: RoundRecord) -> dict:
    return {
        "round": rec.round,
        "strategy": rec.strategy,
        "test_accuracy": rec.test_accuracy,
        "test_loss": rec.test_loss,
        "train_losses": list(rec.train_losses),
        "coalition_sizes": list(rec.coalition_sizes) if rec.coalition_sizes else None,
        "center_ids": list(rec.center_ids) if rec.center_ids else None,
        "assignment_centers": list(rec.assignment_centers) if rec.assignment_centers else None,
        "barycenter_distances": (
            list(rec.barycenter_distances) if rec.barycenter_distances else None
        ),
        "wall_ms": rec.wall_ms,
    }


def results_to_json(cfg: ExperimentConfig, records: Iterable[RoundRecord]) -> str:
    """JSON export: the records (mirroring CSV rows plus diagnostics)
    under an echoed config, for machine-readable provenance."""
    payload = {
        "config": _config_to_jsonable(resolve_config(cfg)),
        "records": [_record_to_jsonable(r) for r in records],
    }
    return json.dumps(payload, indent=2, sort_keys=True) + "\n"
