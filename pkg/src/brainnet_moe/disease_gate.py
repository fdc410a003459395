"""Disease gate: per-sub-network weights over the expert groups."""
from __future__ import annotations

from typing import Sequence

import numpy as np

from .errors import ShapeError
from .moe import GateTrace
from .nn import DenseLayer, Module, Tensor, stack


class DiseaseGate(Module):
    """``softmax(W2 sigmoid(W1 x + b1) + b2)`` over ``K`` disease groups."""

    def __init__(self, in_dim: int, n_diseases: int, rng: np.random.Generator, hidden_dim: int = 64):
        super().__init__()
        self.in_dim = in_dim
        self.n_diseases = n_diseases
        self.layer1 = DenseLayer(in_dim, hidden_dim, rng)
        self.layer2 = DenseLayer(hidden_dim, n_diseases, rng)

    def forward(self, x) -> Tensor:
        return disease_weights(self, x)


def disease_weights(gate: DiseaseGate, x, trace: GateTrace | None = None) -> Tensor:
    if x.shape[-1] != gate.in_dim:
        raise ShapeError(f"sub-network length {x.shape[-1]} does not match gate input {gate.in_dim}")
    hidden = gate.layer1(x).sigmoid()
    weights = gate.layer2(hidden).softmax(-1)
    if trace is not None:
        trace.disease_weights = weights
    return weights


def disease_informed(weights, group_reps) -> Tensor:
    """Convex combination ``sum_k weights[..., k] * group_reps[k]``.

    ``group_reps`` is either a sequence of K tensors shaped ``[..., D]`` or a
    single tensor already stacked as ``[..., K, D]``.
    """
    if not isinstance(weights, Tensor):
        weights = Tensor(weights)
    if isinstance(group_reps, Sequence) and not isinstance(group_reps, Tensor):
        reps = stack([r if isinstance(r, Tensor) else Tensor(r) for r in group_reps], axis=-2)
    else:
        reps = group_reps
    k = weights.shape[-1]
    if reps.shape[-2] != k:
        raise ShapeError(f"{k} disease weights for {reps.shape[-2]} group representations")
    return (weights.unsqueeze(-1) * reps).sum(axis=-2)
