"""Deterministic federated-unlearning simulator.

FedAvg training, historical-contribution layer sensitivity, AoI-tracked
parameter groups, a PPO-driven adaptive sparsifier, baselines, metrics and
theory oracles, all on float64 numpy with seeded RNG throughout.
"""

__version__ = "0.1.0"
