"""FedAvg training loop with recorded client uploads.

Clients run E local epochs of minibatch SGD from the current global model;
the server aggregates size-weighted in ascending client-id order so runs are
bit-identical for a fixed seed. The history keeps each participant's latest
upload for the sensitivity analysis.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .data import ClientPartition, Dataset, ForgetSplit, client_view


class FederationError(ValueError):
    pass


@dataclass(frozen=True)
class FedConfig:
    n_clients: int
    rounds: int
    local_epochs: int
    eta: float
    clients_per_round: int
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.n_clients < 1:
            raise FederationError("need at least one client")
        if self.rounds < 0:
            raise FederationError("rounds must be >= 0")
        if self.local_epochs < 1:
            raise FederationError("local_epochs must be >= 1")
        if self.eta <= 0:
            raise FederationError("eta must be positive")
        if not 1 <= self.clients_per_round <= self.n_clients:
            raise FederationError("clients_per_round must be in [1, n_clients]")
        if self.batch_size < 1:
            raise FederationError("batch_size must be >= 1")


@dataclass
class RoundLog:
    round: int
    participants: list[int]
    loss: float
    accuracy: float


@dataclass
class FederationHistory:
    """Latest upload per participant: flat layer vectors, sizes, last round."""

    models: dict[int, list[np.ndarray]] = field(default_factory=dict)
    sizes: dict[int, int] = field(default_factory=dict)
    last_round: dict[int, int] = field(default_factory=dict)
    snapshots: deque = field(default_factory=lambda: deque(maxlen=0))

    def record(self, client: int, params: list[np.ndarray], size: int, rnd: int) -> None:
        self.models[client] = [p.copy() for p in params]
        self.sizes[client] = int(size)
        self.last_round[client] = int(rnd)

    def clients(self) -> list[int]:
        return sorted(self.models)

    def layer_vector(self, client: int, l: int) -> np.ndarray:
        return self.models[client][l]


def _local_seed(base_seed: int, rnd: int, client: int) -> int:
    ss = np.random.SeedSequence(base_seed, spawn_key=(2, rnd, client))
    return int(ss.generate_state(1)[0])


def local_update(
    model: nn.Model,
    X: np.ndarray,
    y: np.ndarray,
    epochs: int,
    eta: float,
    batch_size: int,
    seed: int,
) -> nn.Model:
    """E epochs of shuffled minibatch SGD starting from `model` (untouched)."""
    if X.shape[0] == 0:
        raise FederationError("client has no samples")
    rng = np.random.default_rng(seed)
    current = model.copy()
    m = X.shape[0]
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, batch_size):
            sel = order[start : start + batch_size]
            _, grads = nn.loss_and_grads(current, nn.Batch(X[sel], y[sel]))
            current = nn.sgd_step(current, grads, eta)
    return current


def aggregate(models: list[nn.Model], sizes: list[int]) -> nn.Model:
    """Size-weighted average, reduced in the order given by the caller."""
    if not models:
        raise FederationError("nothing to aggregate")
    if len(models) != len(sizes):
        raise FederationError("models/sizes length mismatch")
    if any(s <= 0 for s in sizes):
        raise FederationError("sizes must be positive")
    base = models[0]
    for m in models[1:]:
        if m.layer_dims() != base.layer_dims():
            raise FederationError("shape-incongruent models")
    total = float(sum(sizes))
    out = base.copy()
    new_params = [np.zeros_like(p) for p in base.params]
    for m, s in zip(models, sizes):
        w = s / total
        for l, p in enumerate(m.params):
            new_params[l] += w * p
    out.params = new_params
    return out


def evaluate(model: nn.Model, X: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """(mean loss, accuracy) on the given samples."""
    batch = nn.Batch(X, y)
    logits = nn.forward(model, batch)
    logp = nn.log_softmax(logits)
    loss = float(-logp[np.arange(len(y)), y].mean())
    acc = float((logits.argmax(axis=1) == y).mean())
    return loss, acc


def run_rounds(
    cfg: FedConfig,
    part: ClientPartition,
    ds: Dataset,
    model0: nn.Model,
    eligible: list[int] | None = None,
    client_indices: list[np.ndarray] | None = None,
    snapshot_rounds: int = 0,
) -> tuple[nn.Model, FederationHistory, list[RoundLog]]:
    """FedAvg for cfg.rounds rounds from model0.

    `eligible` restricts the selection pool (defaults to all clients);
    `client_indices` overrides each client's sample indices (defaults to the
    partition), which is how retraining drops forgotten samples.
    """
    if part.n_clients != cfg.n_clients:
        raise FederationError(
            f"partition has {part.n_clients} clients, config says {cfg.n_clients}"
        )
    indices = part.indices if client_indices is None else client_indices
    pool = sorted(range(cfg.n_clients) if eligible is None else eligible)
    if not pool:
        raise FederationError("no eligible clients")
    if any(indices[n].size == 0 for n in pool):
        raise FederationError("eligible client has no samples")
    k = min(cfg.clients_per_round, len(pool))
    select_rng = np.random.default_rng(np.random.SeedSequence(cfg.seed, spawn_key=(1,)))
    history = FederationHistory(snapshots=deque(maxlen=snapshot_rounds))
    global_model = model0.copy()
    logs: list[RoundLog] = []
    for rnd in range(1, cfg.rounds + 1):
        participants = sorted(select_rng.choice(pool, size=k, replace=False).tolist())
        updated, weights = [], []
        for n in participants:
            X, y = client_view(ds, indices[n])
            local = local_update(
                global_model,
                X,
                y,
                cfg.local_epochs,
                cfg.eta,
                cfg.batch_size,
                seed=_local_seed(cfg.seed, rnd, n),
            )
            history.record(n, local.params, indices[n].size, rnd)
            updated.append(local)
            weights.append(indices[n].size)
        global_model = aggregate(updated, weights)
        loss, acc = evaluate(global_model, ds.inputs, ds.labels)
        logs.append(RoundLog(round=rnd, participants=participants, loss=loss, accuracy=acc))
        if snapshot_rounds:
            history.snapshots.append((rnd, [p.copy() for p in global_model.params]))
    return global_model, history, logs


def retrain_baseline(
    cfg: FedConfig,
    part: ClientPartition,
    ds: Dataset,
    split: ForgetSplit,
    model0: nn.Model,
) -> tuple[nn.Model, list[RoundLog]]:
    """Gold standard: fresh model trained only on remaining data.

    Clients left with zero samples are excluded from selection; the
    per-round participant count shrinks if the pool is smaller."""
    eligible = [n for n in range(part.n_clients) if split.remain_per_client[n].size > 0]
    if not eligible:
        raise FederationError("retrain impossible: no client has remaining data")
    model, _, logs = run_rounds(
        cfg,
        part,
        ds,
        model0,
        eligible=eligible,
        client_indices=split.remain_per_client,
    )
    return model, logs
