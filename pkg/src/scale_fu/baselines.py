"""Non-adaptive unlearning baselines: budget-matched uniform magnitude
pruning across every layer, and a projected full-batch gradient-ascent proxy.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .aoi import GroupIndex, balanced_ranges


class BaselineError(ValueError):
    pass


def newly_zeroed(before: nn.Model, after: nn.Model) -> int:
    """Coordinates nonzero in `before` and zero in `after`, summed over layers."""
    if before.layer_dims() != after.layer_dims():
        raise BaselineError("models are shape-incongruent")
    total = 0
    for p, q in zip(before.params, after.params):
        total += int(np.count_nonzero((p != 0.0) & (q == 0.0)))
    return total


def full_group_index(model: nn.Model, groups_per_layer: int) -> GroupIndex:
    """Every real (d > 0) layer, split into balanced contiguous groups."""
    layers = [l for l, d in enumerate(model.layer_dims()) if d > 0]
    if not layers:
        raise BaselineError("model has no parameters to prune")
    return GroupIndex(
        layers=tuple(layers),
        ranges=tuple(balanced_ranges(model.layer_dims()[l], groups_per_layer) for l in layers),
    )


def _equal_split_with_spill(budget: int, capacities: list[int]) -> list[int]:
    """Whole-number allocation, as equal as capacities allow.

    Starts from floor(budget/n) each (remainder to the lowest indices) and
    waterfills any excess over a bin's capacity into the still-open bins, so
    the full budget is spent whenever total capacity permits."""
    n = len(capacities)
    alloc = [0] * n
    remaining = min(budget, sum(capacities))
    while remaining > 0:
        open_bins = [i for i in range(n) if alloc[i] < capacities[i]]
        share, extra = divmod(remaining, len(open_bins))
        spent = 0
        for rank, i in enumerate(open_bins):
            want = share + (1 if rank < extra else 0)
            take = min(want, capacities[i] - alloc[i])
            alloc[i] += take
            spent += take
        remaining -= spent
    return alloc


def baseline_uniform(model: nn.Model, total_budget: int, groups_per_layer: int) -> nn.Model:
    """Zero `total_budget` coordinates spread equally over all layers and
    their groups; within a group the smallest magnitudes go first (ties to
    the lowest index), mirroring the adaptive sparsifier's rule."""
    if total_budget < 0:
        raise BaselineError("budget must be non-negative")
    if total_budget > model.num_params:
        raise BaselineError("budget exceeds the parameter count")
    if total_budget == 0:
        return model.copy()
    idx = full_group_index(model, groups_per_layer)
    out = model.copy()
    layer_caps = [
        int(np.count_nonzero(out.params[l] != 0.0)) for l in idx.layers
    ]
    per_layer = _equal_split_with_spill(total_budget, layer_caps)
    for rank, layer in enumerate(idx.layers):
        if per_layer[rank] == 0:
            continue
        vec = out.params[layer]
        group_caps = [
            int(np.count_nonzero(vec[idx.slice_of(layer, j)] != 0.0))
            for j in range(idx.n_groups(layer))
        ]
        per_group = _equal_split_with_spill(per_layer[rank], group_caps)
        for j, k in enumerate(per_group):
            if k == 0:
                continue
            sl = idx.slice_of(layer, j)
            sub = vec[sl]
            nz = np.flatnonzero(sub != 0.0)
            order = nz[np.argsort(np.abs(sub[nz]), kind="stable")]
            sub[order[:k]] = 0.0
            vec[sl] = sub
    return out


@dataclass
class AscentStep:
    step: int
    loss: float
    norm: float
    projected: bool


@dataclass
class AscentResult:
    model: nn.Model
    steps: list[AscentStep]
    halted: bool = False
    halt_reason: str = ""


def baseline_grad_ascent(
    model: nn.Model,
    X_u: np.ndarray,
    y_u: np.ndarray,
    steps: int,
    eta_u: float,
) -> AscentResult:
    """Full-batch gradient ascent on the forget set with a parameter-norm
    projection to twice the starting norm; a non-finite forward pass halts
    the loop with a diagnostic instead of propagating garbage."""
    if X_u.shape[0] == 0:
        raise BaselineError("forget set is empty")
    if steps < 0 or eta_u <= 0:
        raise BaselineError("steps must be >= 0 and eta_u > 0")
    current = model.copy()
    norm_cap = 2.0 * float(np.linalg.norm(nn.flat_params(model)))
    batch = nn.Batch(X_u, y_u)
    log: list[AscentStep] = []
    for t in range(1, steps + 1):
        try:
            loss, grads = nn.loss_and_grads(current, batch)
        except nn.NumericError as err:
            return AscentResult(current, log, halted=True,
                                halt_reason=f"step {t}: {err}")
        current = nn.sgd_step(current, [-g for g in grads], eta_u)   # ascend
        norm = float(np.linalg.norm(nn.flat_params(current)))
        projected = norm > norm_cap > 0.0
        if projected:
            scale = norm_cap / norm
            for l in range(current.num_layers):
                current.params[l] *= scale
            norm = norm_cap
        log.append(AscentStep(t, float(loss), norm, projected))
    return AscentResult(current, log)
