"""Federated averaging simulation for the target model.

Seeding scheme (documented so runs are reproducible and single-client
federated training equals centralized training):

* initial global model: ``init_model(arch, init_seed)``;
* client ``c`` trains with ``TrainConfig.seed = derive_seed(cfg.seed, c)``;
* in round ``r`` (1-based) its local epochs are numbered
  ``(r - 1) * local_epochs ... r * local_epochs - 1``, and ``model.train``
  shuffles epoch ``e`` with ``make_rng(client_seed, e)``.

So each (master seed, round, client) triple owns its own shuffling stream,
and one client over ``R`` rounds of ``E`` epochs shuffles exactly like a
centralized ``train`` of ``R * E`` epochs with the same client seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .dataset import TabularDataset
from .errors import ConfigError, DataError
from .model import Architecture, ModelParams, TrainConfig, init_model, train
from .seeding import derive_seed, make_rng

__all__ = [
    "FLConfig",
    "RoundSnapshot",
    "partition_clients",
    "client_seed",
    "local_update",
    "aggregate",
    "run_rounds",
]


@dataclass(frozen=True)
class FLConfig:
    clients: int = 4
    rounds: int = 10
    local_epochs: int = 2
    partition: str = "uniform"
    train: TrainConfig = field(default_factory=TrainConfig)
    seed: int = 0

    def __post_init__(self):
        if self.clients < 1:
            raise ConfigError("client count must be >= 1")
        if self.rounds < 1:
            raise ConfigError("rounds must be >= 1")
        if self.local_epochs < 1:
            raise ConfigError("local epochs must be >= 1")
        if self.partition not in ("uniform", "by-group"):
            raise ConfigError(f"unknown partition strategy {self.partition!r}")

    def local_config(self, client: int) -> TrainConfig:
        return replace(self.train, epochs=self.local_epochs, seed=client_seed(self.seed, client))


@dataclass(frozen=True)
class RoundSnapshot:
    round: int
    params: ModelParams
    client_sizes: tuple[int, ...]


def client_seed(master: int, client: int) -> int:
    return derive_seed(master, client)


def partition_clients(ds: TabularDataset, cfg: FLConfig) -> list[TabularDataset]:
    """Split ``ds`` into client datasets.

    ``uniform``: a seeded permutation cut into ``cfg.clients`` chunks whose
    sizes differ by at most one, larger chunks first; rows keep their original
    relative order inside a chunk.  ``by-group``: one client per group value,
    in sorted group order (``cfg.clients`` is ignored).
    """
    if cfg.partition == "by-group":
        if ds.groups is None:
            raise ConfigError("by-group partition needs group identifiers")
        return [ds.subset(np.flatnonzero(ds.groups == g)) for g in ds.group_values()]
    if cfg.clients > ds.n:
        raise DataError(f"{cfg.clients} clients but only {ds.n} rows; a client would receive 0 rows")
    order = make_rng(cfg.seed, 0xC11E47).permutation(ds.n)
    base, extra = divmod(ds.n, cfg.clients)
    parts, start = [], 0
    for c in range(cfg.clients):
        size = base + (1 if c < extra else 0)
        parts.append(ds.subset(np.sort(order[start : start + size])))
        start += size
    return parts


def local_update(
    global_params: ModelParams,
    client: TabularDataset,
    cfg: TrainConfig,
    start_epoch: int = 0,
) -> ModelParams:
    """Run ``model.train`` from the broadcast global params on one client's data."""
    params, _ = train(global_params, client.features, client.labels, cfg, start_epoch=start_epoch)
    return params


def aggregate(updates: list[ModelParams], weights: list[float] | np.ndarray) -> ModelParams:
    """Coordinate-wise ``sum_i (n_i / N) * p_i``, summed in list order."""
    if not updates:
        raise ValueError("nothing to aggregate")
    weights = np.asarray(weights, dtype=np.float64)
    if len(weights) != len(updates):
        raise ValueError("one weight per update is required")
    if np.any(weights <= 0):
        raise ValueError("aggregation weights must be positive")
    arch = updates[0].arch
    for u in updates[1:]:
        if u.arch != arch:
            raise ValueError(f"shape mismatch: {u.arch.widths} vs {arch.widths}")
    share = weights / weights.sum()
    ws, bs = [], []
    for layer in range(updates[0].n_layers):
        w = share[0] * updates[0].weights[layer]
        b = share[0] * updates[0].biases[layer]
        for s, u in zip(share[1:], updates[1:]):
            w = w + s * u.weights[layer]
            b = b + s * u.biases[layer]
        ws.append(w)
        bs.append(b)
    return ModelParams(arch, tuple(ws), tuple(bs))


def run_rounds(
    ds: TabularDataset,
    cfg: FLConfig,
    init_seed: int,
    hidden: tuple[int, ...] = (32,),
    initial: ModelParams | None = None,
) -> list[RoundSnapshot]:
    """Broadcast, train locally on every client, average; one snapshot per round."""
    clients = partition_clients(ds, cfg)
    sizes = tuple(c.n for c in clients)
    if initial is None:
        initial = init_model(Architecture.mlp(ds.d, ds.n_classes, hidden), init_seed)
    current = initial
    snapshots = []
    for r in range(1, cfg.rounds + 1):
        start = (r - 1) * cfg.local_epochs
        updates = [
            local_update(current, client, cfg.local_config(c), start_epoch=start)
            for c, client in enumerate(clients)
        ]
        current = aggregate(updates, sizes)
        if not current.is_finite():
            raise FloatingPointError(f"global model became non-finite in round {r}")
        snapshots.append(RoundSnapshot(r, current, sizes))
    return snapshots
