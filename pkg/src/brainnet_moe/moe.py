"""Expert networks, per-group softmax gating and the dense mixture."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError
from .nn import DenseLayer, Module, ModuleList, Tensor, stack


class ExpertNetwork(Module):
    """Two dense layers with GELU in between: ``N -> hidden -> out``."""

    def __init__(self, in_dim: int, hidden_dim: int, out_dim: int, rng: np.random.Generator):
        super().__init__()
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.dense = ModuleList([DenseLayer(in_dim, hidden_dim, rng),
                                 DenseLayer(hidden_dim, out_dim, rng)])

    def forward(self, x) -> Tensor:
        return self.dense[1](self.dense[0](x).gelu())


class ExpertGroup(Module):
    def __init__(self, in_dim: int, n_experts: int, hidden_dim: int, out_dim: int,
                 rng: np.random.Generator):
        super().__init__()
        if n_experts < 2:
            raise ValueError(f"an expert group needs at least 2 experts, got {n_experts}")
        self.in_dim = in_dim
        self.out_dim = out_dim
        self.expert = ModuleList([ExpertNetwork(in_dim, hidden_dim, out_dim, rng)
                                  for _ in range(n_experts)])
        self.gate = DenseLayer(in_dim, n_experts, rng)

    @property
    def n_experts(self) -> int:
        return len(self.expert)


@dataclass
class GateTrace:
    """Gate outputs of one forward pass.

    ``expert_probs[k]`` has shape ``[B, N, E]`` for group ``k``;
    ``disease_weights`` has shape ``[B, N, K]``. Entries stay as tensors so the
    losses can backpropagate through them. ``gate_logits[k]`` keeps the
    pre-softmax gate values for relevance scoring.
    """

    expert_probs: list = field(default_factory=list)
    disease_weights: Tensor | None = None
    gate_logits: list = field(default_factory=list)

    def is_empty(self) -> bool:
        return not self.expert_probs

    def merge(self, other: "GateTrace") -> "GateTrace":
        """Concatenate two traces along the subject axis (detached)."""
        if self.is_empty():
            return GateTrace([Tensor(p.data) for p in other.expert_probs],
                             None if other.disease_weights is None else Tensor(other.disease_weights.data),
                             [Tensor(g.data) for g in other.gate_logits])

        def cat(xs, ys):
            return [Tensor(np.concatenate([a.data, b.data])) for a, b in zip(xs, ys)]

        dw = None
        if self.disease_weights is not None and other.disease_weights is not None:
            dw = Tensor(np.concatenate([self.disease_weights.data, other.disease_weights.data]))
        return GateTrace(cat(self.expert_probs, other.expert_probs), dw,
                         cat(self.gate_logits, other.gate_logits))


def _check_input(group: ExpertGroup, x) -> None:
    if x.shape[-1] != group.in_dim:
        raise ShapeError(f"sub-network length {x.shape[-1]} does not match group input {group.in_dim}")


def gate_probs(group: ExpertGroup, x, trace: GateTrace | None = None) -> Tensor:
    """Softmax over the group gate's logits; shape ``x.shape[:-1] + (E,)``."""
    _check_input(group, x)
    logits = group.gate(x)
    probs = logits.softmax(-1)
    if trace is not None:
        trace.expert_probs.append(probs)
        trace.gate_logits.append(logits)
    return probs


def expert_outputs(group: ExpertGroup, x) -> Tensor:
    """Every expert's output stacked on a new second-to-last axis: ``[..., E, out]``."""
    _check_input(group, x)
    return stack([f(x) for f in group.expert], axis=-2)


def combine(probs: Tensor, outputs: Tensor) -> Tensor:
    return (probs.unsqueeze(-1) * outputs).sum(axis=-2)


def moe_forward(group: ExpertGroup, x, trace: GateTrace | None = None) -> Tensor:
    """Dense mixture: every expert runs and is weighted by its gate probability."""
    if not isinstance(x, Tensor):
        x = Tensor(x)
    return combine(gate_probs(group, x, trace), expert_outputs(group, x))
