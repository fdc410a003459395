"""Specialization regularizers and the composite training objective.

All functions accept tensors (and wrap plain arrays) so they can sit inside
the autodiff graph; call ``float(loss.data)`` for a number.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError, ShapeError, StateError
from .moe import GateTrace
from .nn import Tensor
from .nn.tensor import as_tensor

NORM_FLOOR = 1e-8
_SUM_TOL = 1e-6


def _softplus_inverse(y: float) -> float:
    return y + math.log(-math.expm1(-y))


@dataclass
class LossWeights:
    """Coefficients of the composite objective.

    ``alpha``, ``beta``, ``gamma`` scale expert diversity, disease diversity
    and expert balance; ``lam`` scales the entropy inside expert diversity and
    ``entropy_sign`` flips that term (+1 adds entropy, -1 subtracts it).
    When ``learnable`` is set the three coefficients become softplus-wrapped
    parameters initialised at the given values.
    """

    alpha: float = 0.1
    beta: float = 0.1
    gamma: float = 0.1
    lam: float = 0.1
    entropy_sign: float = 1.0
    learnable: bool = False
    raw: dict = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma", "lam"):
            v = getattr(self, name)
            if not (v >= 0 and math.isfinite(v)):
                raise ValueError(f"loss weight {name} must be finite and >= 0, got {v}")
        if self.entropy_sign not in (1.0, -1.0, 1, -1):
            raise ValueError(f"entropy_sign must be +1 or -1, got {self.entropy_sign}")
        if self.learnable:
            for name in ("alpha", "beta", "gamma"):
                if getattr(self, name) <= 0:
                    raise ValueError(f"learnable {name} must start > 0")
            if self.raw is None:
                self.raw = {name: Tensor(_softplus_inverse(getattr(self, name)), requires_grad=True)
                            for name in ("alpha", "beta", "gamma")}

    def coefficient(self, name: str):
        """Fixed float, or a live softplus tensor when learnable."""
        if self.learnable:
            return self.raw[name].softplus()
        return getattr(self, name)

    def current(self) -> dict:
        if not self.learnable:
            return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma}
        return {k: float(np.logaddexp(0.0, t.data)) for k, t in self.raw.items()}

    def to_dict(self) -> dict:
        return {"alpha": self.alpha, "beta": self.beta, "gamma": self.gamma, "lam": self.lam,
                "entropy_sign": self.entropy_sign, "learnable": self.learnable}


@dataclass
class LossBreakdown:
    cls: float
    expert_diversity: float
    disease_diversity: float
    expert_balance: float
    total: float
    weights: dict = field(default_factory=dict)

    def identity_residual(self) -> float:
        w = self.weights
        rebuilt = (self.cls + w["alpha"] * self.expert_diversity + w["beta"] * self.disease_diversity
                   + w["gamma"] * self.expert_balance)
        return abs(rebuilt - self.total)

    def as_record(self) -> dict:
        return {"cls": self.cls, "e_d": self.expert_diversity, "d_d": self.disease_diversity,
                "e_b": self.expert_balance, "total": self.total}


def entropy(p) -> Tensor:
    """Shannon entropy in nats along the last axis, with ``0 ln 0 = 0``."""
    p = as_tensor(p)
    if (p.data < 0).any():
        raise ValueError("probability vector has a negative entry")
    sums = p.data.sum(axis=-1)
    if np.abs(sums - 1.0).max(initial=0.0) > _SUM_TOL:
        raise ValueError("probability vector does not sum to 1")
    return -p.xlogx().sum(axis=-1)


def population_std(p: Tensor, axis: int = -1) -> Tensor:
    centered = p - p.mean(axis=axis, keepdims=True)
    return (centered * centered).mean(axis=axis).sqrt()


def _require(trace: GateTrace) -> None:
    if trace is None or trace.is_empty():
        raise StateError("gate trace is empty; run a forward pass first")


def expert_diversity_loss(trace: GateTrace, lam: float = 0.1, entropy_sign: float = 1.0) -> Tensor:
    """Sum over groups of ``1 - mean std(gate) + sign * lam * mean H(gate)``.

    Std and entropy are taken per gate vector (over the E experts) and then
    averaged over every subject and sub-network in the trace.
    """
    _require(trace)
    total = None
    for probs in trace.expert_probs:
        probs = as_tensor(probs)
        term = 1.0 - population_std(probs).mean()
        if lam:
            term = term + entropy(probs).mean() * (entropy_sign * lam)
        total = term if total is None else total + term
    return total


def cosine(a: Tensor, b: Tensor) -> Tensor:
    """Cosine similarity along the last axis with norms floored at 1e-8."""
    na = (a * a).sum(axis=-1).sqrt().clamp_min(NORM_FLOOR)
    nb = (b * b).sum(axis=-1).sqrt().clamp_min(NORM_FLOOR)
    return (a * b).sum(axis=-1) / (na * nb)


def disease_diversity_loss(reps, labels, n_classes: int | None = None) -> Tensor:
    """Centroid separation minus within-class consistency.

    Sum over ordered pairs of present classes ``i != j`` of
    ``cos(centroid_i, centroid_j)``, minus the batch mean of
    ``cos(v_s, centroid_{label(s)})``.
    """
    reps = as_tensor(reps)
    labels = np.asarray(labels, dtype=np.int64)
    if reps.ndim != 2 or reps.shape[0] != labels.shape[0]:
        raise ShapeError(f"expected [B, D] representations for {labels.shape[0]} labels, got {reps.shape}")
    if reps.shape[0] == 0:
        raise StateError("disease diversity needs at least one sample")
    n_classes = int(labels.max()) + 1 if n_classes is None else n_classes
    present = [c for c in range(n_classes) if (labels == c).any()]
    member = np.zeros((len(present), labels.shape[0]))
    for r, c in enumerate(present):
        idx = labels == c
        member[r, idx] = 1.0 / idx.sum()
    centroids = Tensor(member) @ reps

    consistency = cosine(reps, centroids[np.searchsorted(present, labels)]).mean()
    if len(present) < 2:
        return -consistency
    cn = centroids / (centroids * centroids).sum(axis=-1, keepdims=True).sqrt().clamp_min(NORM_FLOOR)
    sims = cn @ cn.T
    off_diag = 1.0 - np.eye(len(present))
    return (sims * off_diag).sum() - consistency


def wasserstein1_discrete(p, q) -> Tensor:
    """1-D optimal-transport distance on the support ``0..E-1``: ``sum |CDF_p - CDF_q|``."""
    p, q = as_tensor(p), as_tensor(q)
    if p.shape[-1] != q.shape[-1]:
        raise ShapeError(f"distributions have different support sizes {p.shape[-1]} and {q.shape[-1]}")
    return (p.cumsum(-1) - q.cumsum(-1)).abs().sum(axis=-1)


def expert_balance_loss(trace: GateTrace) -> Tensor:
    """W1 between mean expert utilization and uniform, per group, averaged over groups."""
    _require(trace)
    total = None
    for probs in trace.expert_probs:
        probs = as_tensor(probs)
        e = probs.shape[-1]
        lead = tuple(range(probs.ndim - 1))
        p_emp = probs.mean(axis=lead)
        d = wasserstein1_discrete(p_emp, np.full(e, 1.0 / e))
        total = d if total is None else total + d
    return total * (1.0 / len(trace.expert_probs))


def total_loss(cls, parts, w: LossWeights) -> tuple[Tensor, LossBreakdown]:
    """Combine ``cls + alpha*e_d + beta*d_d + gamma*e_b``.

    ``parts`` is ``(expert_diversity, disease_diversity, expert_balance)``.
    Returns the differentiable total and a float breakdown.
    """
    cls = as_tensor(cls)
    ed, dd, eb = (as_tensor(p) for p in parts)
    for name, t in (("cls", cls), ("e_d", ed), ("d_d", dd), ("e_b", eb)):
        if not np.isfinite(t.data).all():
            raise NumericalError(f"loss component {name} is not finite")
    total = cls
    for name, part in (("alpha", ed), ("beta", dd), ("gamma", eb)):
        coef = w.coefficient(name)
        if isinstance(coef, Tensor) or coef != 0.0:
            total = total + part * coef
    weights = w.current()
    breakdown = LossBreakdown(float(cls.data), float(ed.data), float(dd.data), float(eb.data),
                              float(total.data), weights)
    return total, breakdown
