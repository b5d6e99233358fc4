"""Unlearning quality and efficiency metrics.

Remaining/forgetting accuracy are exact argmax counts (ties resolve to the
lowest class index). The forgetting rate compares true-label confidence
before and after unlearning. Communication overhead combines transmitted
scalar counts with the mean global age over the action trajectory, replayed
deterministically from the action log.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import nn
from .aoi import AoiLedger, GroupIndex

CONFIDENCE_FLOOR = 1e-8


class MetricsError(ValueError):
    pass


def _logits(model: nn.Model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    if X.shape[0] == 0:
        raise MetricsError("metric undefined on an empty sample set")
    return nn.forward(model, nn.Batch(X, y))


def accuracy(model: nn.Model, X: np.ndarray, y: np.ndarray) -> float:
    """Fraction of argmax-correct predictions; argmax ties go to the lowest
    class index, so the division is the only non-exact operation."""
    logits = _logits(model, X, y)
    hits = int(np.count_nonzero(logits.argmax(axis=1) == y))
    return hits / len(y)


def remaining_accuracy(model: nn.Model, X_r: np.ndarray, y_r: np.ndarray) -> float:
    return accuracy(model, X_r, y_r)


def forgetting_accuracy(model: nn.Model, X_u: np.ndarray, y_u: np.ndarray) -> float:
    return accuracy(model, X_u, y_u)


def true_label_confidence(model: nn.Model, X: np.ndarray, y: np.ndarray) -> np.ndarray:
    probs = nn.softmax(_logits(model, X, y))
    return probs[np.arange(len(y)), y]


def forgetting_rate(
    original: nn.Model,
    unlearned: nn.Model,
    X_u: np.ndarray,
    y_u: np.ndarray,
) -> float:
    """1 - mean confidence-retention ratio on the forget set.

    The original confidence in the denominator is floored at 1e-8; a model
    that grows MORE confident after unlearning yields a negative value,
    reported as-is."""
    p_before = true_label_confidence(original, X_u, y_u)
    p_after = true_label_confidence(unlearned, X_u, y_u)
    ratios = p_after / np.maximum(p_before, CONFIDENCE_FLOOR)
    return float(1.0 - ratios.mean())


# --- communication / freshness ------------------------------------------------


def _index_of(ledger_or_idx) -> GroupIndex:
    if isinstance(ledger_or_idx, AoiLedger):
        return ledger_or_idx.idx
    if isinstance(ledger_or_idx, GroupIndex):
        return ledger_or_idx
    raise MetricsError("expected an AoiLedger or GroupIndex")


def transmitted_count(action_rows: list[dict], ledger_or_idx) -> int:
    """Scalar parameters in every touched group, summed over steps (each
    touch retransmits the whole group once)."""
    idx = _index_of(ledger_or_idx)
    total = 0
    for row in action_rows:
        layer = row["layer"]
        for j in row["groups"]:
            total += idx.group_size(layer, j)
    return total


def replay_global_aoi(action_rows: list[dict], ledger_or_idx, horizon: int | None = None) -> list[float]:
    """Global AoI after each replayed step (advance, then touch that step's
    groups), reproducing the deployment trajectory from its action log."""
    idx = _index_of(ledger_or_idx)
    by_step: dict[int, list[tuple[int, int]]] = {}
    for row in action_rows:
        by_step.setdefault(int(row["step"]), []).extend(
            (row["layer"], j) for j in row["groups"]
        )
    if horizon is None:
        horizon = max(by_step) if by_step else 0
    if by_step and horizon < max(by_step):
        raise MetricsError("horizon shorter than the action log")
    ledger = AoiLedger(idx)
    series = []
    for t in range(1, horizon + 1):
        ledger.advance()
        if t in by_step:
            ledger.touch(by_step[t])
        series.append(float(ledger.ages().mean()))
    return series


def comm_overhead(
    action_rows: list[dict],
    ledger_or_idx,
    alpha_w: float,
    beta_w: float,
    secs_per_step: float,
    horizon: int | None = None,
) -> dict:
    """C = alpha_w * C_t + beta_w * mean global AoI (second-denominated).

    C_t counts transmitted scalars. The freshness term is the mean of the
    global AoI over the replayed trajectory, scaled by secs_per_step. The
    C_t term is additive over trajectory segments; the freshness term
    composes as a step-weighted mean."""
    if alpha_w < 0 or beta_w < 0 or secs_per_step < 0:
        raise MetricsError("comm weights must be non-negative")
    c_t = transmitted_count(action_rows, ledger_or_idx)
    series = replay_global_aoi(action_rows, ledger_or_idx, horizon)
    mean_steps = float(np.mean(series)) if series else 0.0
    mean_secs = mean_steps * secs_per_step
    return {
        "comm_ct": c_t,
        "mean_aoi_steps": mean_steps,
        "mean_aoi_secs": mean_secs,
        "aoi_series": series,
        "cost": alpha_w * c_t + beta_w * mean_secs,
    }


# --- report -------------------------------------------------------------------


@dataclass
class EvalReport:
    method: str
    scenario: str
    ra: float
    fa: float
    fr: float
    comm_ct: float
    mean_aoi_steps: float
    mean_aoi_secs: float
    wall_secs: float
    seed: int
    aoi_sum_series: list = field(default_factory=list)
    comm_cost: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.ra <= 1.0 or not 0.0 <= self.fa <= 1.0:
            raise MetricsError("accuracies must lie in [0, 1]")
        if self.comm_ct < 0:
            raise MetricsError("transmission count cannot be negative")

    def json_dict(self) -> dict:
        return {
            "method": self.method,
            "scenario": self.scenario,
            "ra": self.ra,
            "fa": self.fa,
            "fr": self.fr,
            "comm_ct": self.comm_ct,
            "mean_aoi_steps": self.mean_aoi_steps,
            "mean_aoi_secs": self.mean_aoi_secs,
            "wall_secs": self.wall_secs,
            "seed": self.seed,
        }


def write_metrics_json(report: EvalReport, path: str | Path, config_hash: str) -> None:
    payload = report.json_dict()
    payload["config_hash"] = config_hash
    text = json.dumps(payload, sort_keys=True, indent=2) + "\n"
    Path(path).write_text(text)


def read_metrics_json(path: str | Path) -> dict:
    return json.loads(Path(path).read_text())
