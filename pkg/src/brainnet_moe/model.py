"""Full model assembly, prediction, relevance scores and checkpoints."""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field, fields
from typing import Sequence

import numpy as np

from .connectome import SubNetworkBatch
from .disease_gate import DiseaseGate, disease_informed, disease_weights
from .errors import ShapeError, StateError
from .losses import (LossBreakdown, LossWeights, disease_diversity_loss, expert_balance_loss,
                     expert_diversity_loss, total_loss)
from .moe import ExpertGroup, GateTrace, combine, expert_outputs, gate_probs
from .nn import DenseLayer, Module, ModuleList, Tensor, TransformerLayer, cross_entropy, no_grad, stack
from .nn.layers import glorot
from .nn.serialization import load_tensors, save_tensors
from .seeding import substream


@dataclass
class ModelConfig:
    n_regions: int = 148
    n_classes: int = 3
    experts_per_group: int = 3
    expert_hidden: int = 256
    model_dim: int = 128
    transformer_layers: int = 2
    n_heads: int = 1
    gate_hidden: int = 64
    loss: LossWeights = field(default_factory=LossWeights)
    seed: int = 0

    def __post_init__(self):
        if isinstance(self.loss, dict):
            self.loss = LossWeights(**self.loss)
        for name in ("n_regions", "n_classes", "expert_hidden", "model_dim", "transformer_layers",
                     "n_heads", "gate_hidden"):
            if int(getattr(self, name)) < 1:
                raise ValueError(f"{name} must be positive, got {getattr(self, name)}")
        if self.experts_per_group < 2:
            raise ValueError(f"experts_per_group must be >= 2, got {self.experts_per_group}")
        if self.n_classes < 2:
            raise ValueError(f"n_classes must be >= 2, got {self.n_classes}")

    def to_dict(self) -> dict:
        d = {f.name: getattr(self, f.name) for f in fields(self) if f.name != "loss"}
        d["loss"] = self.loss.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        d = dict(d)
        loss = d.pop("loss", {})
        return cls(loss=LossWeights(**loss), **d)


class _LossParams(Module):
    def __init__(self, weights: LossWeights):
        super().__init__()
        for name, t in weights.raw.items():
            setattr(self, name, t)


@dataclass
class ForwardPass:
    logits: Tensor
    trace: GateTrace
    pooled: Tensor

    def __iter__(self):
        yield self.logits
        yield self.trace


class BrainNetMoE(Module):
    """K expert groups + disease gate -> region tokens -> transformer -> mean pool -> MLP.

    The number of expert groups, disease-gate outputs and classes are all ``K``.
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        rng = substream(config.seed, "init")
        n, k, d = config.n_regions, config.n_classes, config.model_dim
        self.group = ModuleList([
            ExpertGroup(n, config.experts_per_group, config.expert_hidden, d, rng) for _ in range(k)])
        self.disease_gate = DiseaseGate(n, k, rng, hidden_dim=config.gate_hidden)
        self.region_embedding = Tensor(glorot(rng, n, d), requires_grad=True)
        self.transformer = ModuleList([
            TransformerLayer(d, rng, n_heads=config.n_heads) for _ in range(config.transformer_layers)])
        self.classifier = ModuleList([DenseLayer(d, d, rng), DenseLayer(d, k, rng)])
        if config.loss.learnable:
            self.loss_weights = _LossParams(config.loss)

    def forward(self, batch) -> ForwardPass:
        return forward(self, batch)


def as_batch_array(batch, n_regions: int | None = None) -> np.ndarray:
    """Stack subjects into ``[B, N, N]``."""
    if isinstance(batch, Tensor):
        arr = batch.data
    elif isinstance(batch, SubNetworkBatch):
        arr = batch.rows[None]
    elif isinstance(batch, (list, tuple)) and batch and isinstance(batch[0], SubNetworkBatch):
        arr = np.stack([b.rows for b in batch])
    else:
        arr = np.asarray(batch, dtype=np.float64)
    if arr.ndim == 2:
        arr = arr[None]
    if arr.ndim != 3 or arr.shape[1] != arr.shape[2]:
        raise ShapeError(f"expected a batch of N x N sub-network stacks, got shape {arr.shape}")
    if n_regions is not None and arr.shape[1] != n_regions:
        raise ShapeError(f"model expects {n_regions} regions, batch has {arr.shape[1]}")
    return arr


def forward(model: BrainNetMoE, batch) -> ForwardPass:
    """Run the full pipeline on ``[B, N, N]`` input (row ``i`` = sub-network ``i``)."""
    x = Tensor(as_batch_array(batch, model.config.n_regions))
    trace = GateTrace()
    reps = []
    for group in model.group:
        reps.append(combine(gate_probs(group, x, trace), expert_outputs(group, x)))
    weights = disease_weights(model.disease_gate, x, trace)
    tokens = disease_informed(weights, stack(reps, axis=-2)) + model.region_embedding
    for layer in model.transformer:
        tokens = layer(tokens)
    pooled = tokens.mean(axis=1)
    logits = model.classifier[1](model.classifier[0](pooled).gelu())
    return ForwardPass(logits, trace, pooled)


def compute_loss(model: BrainNetMoE, batch, labels) -> tuple[Tensor, LossBreakdown, ForwardPass]:
    """Composite objective on one mini-batch."""
    out = forward(model, batch)
    w = model.config.loss
    cls = cross_entropy(out.logits, labels)
    parts = (expert_diversity_loss(out.trace, w.lam, w.entropy_sign),
             disease_diversity_loss(out.pooled, labels, model.config.n_classes),
             expert_balance_loss(out.trace))
    total, breakdown = total_loss(cls, parts, w)
    return total, breakdown, out


def argmax_lowest(logits: np.ndarray) -> np.ndarray:
    # np.argmax already returns the first maximal index
    return np.argmax(np.asarray(logits), axis=-1)


def predict_logits(model: BrainNetMoE, batch, chunk: int = 256) -> np.ndarray:
    arr = as_batch_array(batch, model.config.n_regions)
    out = []
    with no_grad():
        for start in range(0, arr.shape[0], chunk):
            out.append(forward(model, arr[start:start + chunk]).logits.data)
    return np.concatenate(out) if out else np.zeros((0, model.config.n_classes))


def predict(model: BrainNetMoE, batch) -> np.ndarray:
    """Class indices; exact ties go to the lowest class index."""
    return argmax_lowest(predict_logits(model, batch))


def collect_trace(model: BrainNetMoE, batch, chunk: int = 256) -> GateTrace:
    arr = as_batch_array(batch, model.config.n_regions)
    trace = GateTrace()
    with no_grad():
        for start in range(0, arr.shape[0], chunk):
            trace = trace.merge(forward(model, arr[start:start + chunk]).trace)
    return trace


# -- relevance -----------------------------------------------------------

@dataclass
class RelevanceReport:
    """Relevance of each region, per class and per class contrast.

    ``scores[k, i]`` is the mean over subjects of ``disease_weight_k(x_i) *
    max_e gate_k(x_i)[e]``: how strongly expert group ``k`` claims and
    activates on region ``i``.

    ``class_scores[k]`` and ``contrasts[(a, b)]`` are discriminative scores,
    built only when subject labels are given: each subject/region gets a
    profile ``disease_weight_g(x_i) * g_{g,e}(x_i)`` over every group ``g`` and
    expert ``e`` (``g`` is the pre-softmax gate value), and the score is the
    L1 distance between the mean profile of class ``a`` and that of class
    ``b`` (``class_scores`` compare a class against all other subjects).
    Without labels the contrasts fall back to ``|scores[a] - scores[b]|``.
    """

    scores: np.ndarray
    region_labels: list
    class_names: list
    top: int = 3
    contrasts: dict = field(default_factory=dict)
    class_scores: np.ndarray | None = None

    @staticmethod
    def ranking(values: np.ndarray) -> list[int]:
        # stable sort on the negated score: ties keep region-index order
        return [int(i) for i in np.argsort(-np.asarray(values), kind="stable")]

    def class_ranking_source(self) -> np.ndarray:
        return self.scores if self.class_scores is None else self.class_scores

    def top_regions(self, k: int, m: int | None = None) -> list[int]:
        return self.ranking(self.class_ranking_source()[k])[: m or self.top]

    def top_group_regions(self, k: int, m: int | None = None) -> list[int]:
        return self.ranking(self.scores[k])[: m or self.top]

    def top_contrast(self, a: int, b: int, m: int | None = None) -> list[int]:
        return self.ranking(self.contrasts[(a, b)])[: m or self.top]

    def to_dict(self) -> dict:
        src = self.class_ranking_source()
        rows = [{"class": self.class_names[k], "region": self.region_labels[i], "score": float(self.scores[k, i])}
                for k in range(self.scores.shape[0]) for i in range(self.scores.shape[1])]
        per_class = {self.class_names[k]: [{"region": self.region_labels[i], "score": float(src[k, i])}
                                           for i in self.top_regions(k)]
                     for k in range(src.shape[0])}
        contrasts = {f"{self.class_names[a]} vs {self.class_names[b]}":
                     [{"region": self.region_labels[i], "score": float(self.contrasts[(a, b)][i])}
                      for i in self.top_contrast(a, b)]
                     for a, b in self.contrasts}
        return {"top": self.top, "discriminative": self.class_scores is not None, "scores": rows,
                "per_class_top": per_class, "contrasts": contrasts}

    def format_text(self) -> str:
        src = self.class_ranking_source()
        kind = "vs rest" if self.class_scores is not None else "group relevance"
        lines = []
        for k, name in enumerate(self.class_names):
            lines.append(f"class {name} ({kind}): top-{self.top} regions")
            for rank, i in enumerate(self.top_regions(k), 1):
                lines.append(f"  {rank:>2}  {self.region_labels[i]:<28} {src[k, i]:.6f}")
        for a, b in self.contrasts:
            lines.append(f"contrast {self.class_names[a]} vs {self.class_names[b]}: top-{self.top} regions")
            for rank, i in enumerate(self.top_contrast(a, b), 1):
                lines.append(f"  {rank:>2}  {self.region_labels[i]:<28} {self.contrasts[(a, b)][i]:.6f}")
        return "\n".join(lines) + "\n"


def relevance_from_trace(trace: GateTrace, subject_mask=None) -> np.ndarray:
    """``mean_s [ disease_weight[s, i, k] * max_e gate_k[s, i, e] ]`` as a ``[K, N]`` array."""
    if trace.is_empty() or trace.disease_weights is None or trace.disease_weights.shape[0] == 0:
        raise StateError("relevance needs a non-empty gate trace")
    dw = trace.disease_weights.data
    peak = np.stack([p.data.max(axis=-1) for p in trace.expert_probs], axis=-1)
    prod = dw * peak
    if subject_mask is not None:
        prod = prod[np.asarray(subject_mask, dtype=bool)]
        if prod.shape[0] == 0:
            raise StateError("no subjects selected for relevance")
    return prod.mean(axis=0).T


def gate_profiles(trace: GateTrace) -> np.ndarray:
    """Per-subject, per-region ``disease_weight_g * gate_logit_{g,e}``, shape ``[S, N, K*E]``."""
    if trace.is_empty() or not trace.gate_logits:
        raise StateError("relevance needs a gate trace with gate logits")
    dw = trace.disease_weights.data
    logits = np.stack([g.data for g in trace.gate_logits], axis=2)
    prof = dw[..., None] * logits
    return prof.reshape(prof.shape[0], prof.shape[1], -1)


def profile_distance(profiles: np.ndarray, mask_a, mask_b) -> np.ndarray:
    """L1 distance between two subject groups' mean profiles, per region."""
    a, b = profiles[np.asarray(mask_a, bool)], profiles[np.asarray(mask_b, bool)]
    if a.shape[0] == 0 or b.shape[0] == 0:
        return np.zeros(profiles.shape[1])
    return np.abs(a.mean(axis=0) - b.mean(axis=0)).sum(axis=-1)


def relevance_scores(model: BrainNetMoE, batch, labels=None, region_labels: Sequence[str] | None = None,
                     class_names: Sequence[str] | None = None, top: int = 3) -> RelevanceReport:
    """Relevance report for the subjects in ``batch`` (typically the test split)."""
    arr = as_batch_array(batch, model.config.n_regions)
    if arr.shape[0] == 0:
        raise StateError("relevance needs at least one subject")
    trace = collect_trace(model, arr)
    scores = relevance_from_trace(trace)
    k, n = scores.shape
    region_labels = list(region_labels) if region_labels is not None else [f"R{i:03d}" for i in range(n)]
    class_names = list(class_names) if class_names is not None else [str(c) for c in range(k)]
    pairs = list(itertools.combinations(range(k), 2))
    if labels is None:
        contrasts = {(a, b): np.abs(scores[a] - scores[b]) for a, b in pairs}
        return RelevanceReport(scores, region_labels, class_names, top, contrasts)
    labels = np.asarray(labels)
    if labels.shape[0] != arr.shape[0]:
        raise ShapeError(f"{labels.shape[0]} labels for {arr.shape[0]} subjects")
    prof = gate_profiles(trace)
    class_scores = np.stack([profile_distance(prof, labels == c, labels != c) for c in range(k)])
    contrasts = {(a, b): profile_distance(prof, labels == a, labels == b) for a, b in pairs}
    return RelevanceReport(scores, region_labels, class_names, top, contrasts, class_scores)


# -- checkpoints ---------------------------------------------------------

def save_checkpoint(model: BrainNetMoE, path, meta: dict | None = None):
    extra = {"model_config": model.config.to_dict()}
    if meta:
        extra.update(meta)
    return save_tensors(path, [(name, p.data) for name, p in model.named_parameters()], extra)


def load_checkpoint(path, config: ModelConfig | None = None) -> BrainNetMoE:
    """Rebuild a model from a checkpoint directory.

    Without ``config`` the stored model config is used; with one, every stored
    tensor must exist in that architecture with the same shape.
    """
    tensors, meta = load_tensors(path)
    if config is None:
        if "model_config" not in meta:
            raise ShapeError("checkpoint carries no model config; pass one explicitly")
        config = ModelConfig.from_dict(meta["model_config"])
    model = BrainNetMoE(config)
    params = dict(model.named_parameters())
    for name, arr in tensors.items():
        if name not in params:
            raise ShapeError(f"checkpoint tensor {name!r} does not exist in this model")
        if params[name].shape != arr.shape:
            raise ShapeError(f"checkpoint tensor {name!r} has shape {arr.shape}, model expects {params[name].shape}")
    missing = [name for name in params if name not in tensors]
    if missing:
        raise ShapeError(f"checkpoint lacks tensors: {', '.join(missing[:5])}")
    for name, p in params.items():
        p.data[...] = tensors[name]
    return model
