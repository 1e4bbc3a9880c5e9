"""Three-tier federated training: floors -> buildings -> global model.

Only :class:`~hflloc.network.ModelParams` cross tier boundaries. The
aggregation functions never see shard data.
"""

from __future__ import annotations

import json
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from typing import Callable, Mapping, Sequence

import numpy as np

from .dataset import ClientShard, ProcessedDataset
from .metrics import mean_distance_error
from .network import REFERENCE_DROPOUT, ModelParams, TrainConfig, init_params, make_streams, predict, train_epochs

__all__ = [
    "FederationTopology",
    "FlConfig",
    "RoundRecord",
    "broadcast",
    "aggregate_weighted",
    "regional_aggregate",
    "global_aggregate",
    "run_federated",
    "write_round_log",
]

ClientId = tuple


@dataclass(frozen=True)
class FederationTopology:
    buildings: tuple
    floors_per_building: Mapping  # building -> tuple of client ids
    client_sizes: Mapping  # client id -> |D_c|

    def __post_init__(self):
        seen = {}
        for b in self.buildings:
            for c in self.floors_per_building.get(b, ()):
                if c in seen:
                    raise ValueError(f"client {c} belongs to buildings {seen[c]} and {b}")
                seen[c] = b
        if set(seen) != set(self.client_sizes):
            raise ValueError("client_sizes keys must match the clients listed per building")
        for c, n in self.client_sizes.items():
            if n < 1:
                raise ValueError(f"client {c} has size {n}; sizes must be >= 1")

    @property
    def clients(self) -> list:
        """All client ids, buildings in order, floors in listed order."""
        return [c for b in self.buildings for c in self.floors_per_building[b]]

    @property
    def total_size(self) -> int:
        return int(sum(self.client_sizes.values()))

    @classmethod
    def from_shards(cls, shards: Sequence[ClientShard], include=None) -> "FederationTopology":
        """Group (building, floor) shards by building.

        ``include`` optionally restricts the federation to a list of client ids.
        """
        if include is not None:
            wanted = {tuple(c) for c in include}
            shards = [s for s in shards if tuple(s.client_id) in wanted]
        if not shards:
            raise ValueError("topology has no clients")
        floors = {}
        for s in sorted(shards, key=lambda s: s.client_id):
            floors.setdefault(s.building_id, []).append(tuple(s.client_id))
        return cls(
            buildings=tuple(sorted(floors)),
            floors_per_building={b: tuple(cs) for b, cs in floors.items()},
            client_sizes={tuple(s.client_id): s.size for s in shards},
        )


@dataclass(frozen=True)
class FlConfig:
    rounds: int = 100
    local_epochs: int = 10
    convergence_eps: float = 0.0  # meters; 0 disables early stopping
    patience: int = 1
    train: TrainConfig = field(default_factory=TrainConfig)
    deterministic: bool = True
    n_jobs: int = 1
    evaluate_regional: bool = True
    track_train_mde: bool = True

    def __post_init__(self):
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ValueError("local_epochs must be >= 1")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")
        if self.convergence_eps < 0:
            raise ValueError("convergence_eps must be >= 0")


@dataclass
class RoundRecord:
    round: int
    per_client_train_mae: dict
    global_val_mde: float
    regional_val_mde: dict | None = None
    global_train_mde: float | None = None
    local_epochs: int = 0
    duration_ms: float = 0.0

    def to_json(self) -> dict:
        d = asdict(self)
        d["per_client_train_mae"] = {_key(c): v for c, v in self.per_client_train_mae.items()}
        if self.regional_val_mde is not None:
            d["regional_val_mde"] = {str(b): v for b, v in self.regional_val_mde.items()}
        return d


def _key(client) -> str:
    return "B{}F{}".format(*client) if isinstance(client, tuple) and len(client) == 2 else str(client)


def broadcast(global_params: ModelParams, topology: FederationTopology) -> dict:
    """Give every client its own copy of the global model."""
    return {c: global_params.copy() for c in topology.clients}


def aggregate_weighted(models: Sequence[ModelParams], sizes: Sequence[float]) -> ModelParams:
    """Size-weighted mean of parameter vectors, accumulated in list order."""
    models = list(models)
    sizes = [float(s) for s in sizes]
    if not models:
        raise ValueError("cannot aggregate an empty list of models")
    if len(models) != len(sizes):
        raise ValueError(f"{len(models)} models but {len(sizes)} sizes")
    if any(s <= 0 for s in sizes):
        raise ValueError("aggregation weights must be positive")
    first = models[0]
    for m in models[1:]:
        if not first.same_shape(m):
            raise ValueError(f"shape mismatch: {first.dims} vs {m.dims}")
    if len(models) == 1:
        return first.copy()
    total = sum(sizes)
    acc = np.zeros_like(first.flat)
    for m, s in zip(models, sizes):
        acc += (s / total) * m.flat
    return ModelParams(first.dims, acc, first.dropout)


def regional_aggregate(floor_models: Mapping, topology: FederationTopology) -> dict:
    """Per building: weighted floor average and the summed floor sizes."""
    regional = {}
    for b in topology.buildings:
        clients = topology.floors_per_building[b]
        missing = [c for c in clients if c not in floor_models]
        if missing:
            raise KeyError(f"building {b}: no model for clients {missing}")
        sizes = [topology.client_sizes[c] for c in clients]
        regional[b] = (aggregate_weighted([floor_models[c] for c in clients], sizes), int(sum(sizes)))
    return regional


def global_aggregate(regional: Mapping) -> ModelParams:
    if not regional:
        raise ValueError("no regional models to aggregate")
    keys = sorted(regional)
    return aggregate_weighted([regional[b][0] for b in keys], [regional[b][1] for b in keys])


def _mde(params, data: ProcessedDataset) -> float:
    return mean_distance_error(predict(params, data.features) + data.target_offset, data.coordinates)


def run_federated(
    topology: FederationTopology,
    shards: Sequence[ClientShard] | Mapping,
    fl_cfg: FlConfig = FlConfig(),
    validation: ProcessedDataset | None = None,
    init: ModelParams | None = None,
    on_round: Callable[[RoundRecord, ModelParams], None] | None = None,
):
    """Run up to ``fl_cfg.rounds`` communication rounds.

    Each round: broadcast, local training on every client, per-building
    aggregation, global aggregation, evaluation. Client optimizers restart
    every round; each client keeps its own shuffle/dropout RNG across rounds.
    Returns ``(global_params, records)``.
    """
    if not isinstance(shards, Mapping):
        shards = {tuple(s.client_id): s for s in shards}
    clients = topology.clients
    for c in clients:
        if c not in shards:
            raise KeyError(f"no shard for client {c}")
        if shards[c].size != topology.client_sizes[c]:
            raise ValueError(f"client {c}: shard has {shards[c].size} rows, topology says {topology.client_sizes[c]}")

    tcfg = fl_cfg.train
    n_in = shards[clients[0]].features.shape[1]
    if init is None:
        dims = ((256, n_in), (64, 256), (2, 64))
        init = init_params(tcfg.seed, dims, REFERENCE_DROPOUT)
    global_params = init.copy()
    streams = {c: make_streams(tcfg.seed, k) for k, c in enumerate(clients)}

    pooled_train = None
    if fl_cfg.track_train_mde:
        from .dataset import concat_shards

        pooled_train = concat_shards([shards[c] for c in clients])
    val_by_building = {}
    if validation is not None and fl_cfg.evaluate_regional:
        for b in topology.buildings:
            rows = np.flatnonzero(validation.labels[:, 0] == b)
            if rows.size:
                val_by_building[b] = validation.subset(rows)

    def local(c, start):
        params, curve = train_epochs(shards[c], start, tcfg, streams[c], epochs=fl_cfg.local_epochs)
        return params, curve[-1].train_mae

    pool = None
    if not fl_cfg.deterministic and fl_cfg.n_jobs != 1:
        pool = ThreadPoolExecutor(max_workers=None if fl_cfg.n_jobs < 1 else fl_cfg.n_jobs)

    records = []
    best = np.inf
    stale = 0
    try:
        for r in range(fl_cfg.rounds):
            t0 = time.perf_counter()
            local_models = broadcast(global_params, topology)
            if pool is None:
                results = {c: local(c, local_models[c]) for c in clients}
            else:
                futures = {c: pool.submit(local, c, local_models[c]) for c in clients}
                # fixed client order keeps the reduction independent of scheduling
                results = {c: futures[c].result() for c in clients}
            floor_models = {c: results[c][0] for c in clients}
            regional = regional_aggregate(floor_models, topology)
            global_params = global_aggregate(regional)

            val_mde = _mde(global_params, validation) if validation is not None else float("nan")
            regional_mde = None
            if val_by_building:
                regional_mde = {b: _mde(regional[b][0], val_by_building[b]) for b in val_by_building}
            record = RoundRecord(
                round=r + 1,
                per_client_train_mae={c: results[c][1] for c in clients},
                global_val_mde=val_mde,
                regional_val_mde=regional_mde,
                global_train_mde=_mde(global_params, pooled_train) if pooled_train is not None else None,
                local_epochs=fl_cfg.local_epochs * len(clients),
                duration_ms=(time.perf_counter() - t0) * 1000.0,
            )
            records.append(record)
            if on_round is not None:
                on_round(record, global_params)

            if fl_cfg.convergence_eps > 0 and validation is not None:
                if best - val_mde < fl_cfg.convergence_eps:
                    stale += 1
                else:
                    stale = 0
                best = min(best, val_mde)
                if stale >= fl_cfg.patience:
                    break
    finally:
        if pool is not None:
            pool.shutdown()
    return global_params, records


def write_round_log(records: Sequence[RoundRecord], fh) -> None:
    """JSON-lines, one object per round."""
    for rec in records:
        fh.write(json.dumps(rec.to_json(), sort_keys=True) + "\n")
