"""Training loop, one-vs-rest macro metrics and the ablation harness."""
from __future__ import annotations

import copy
import json
import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable

import numpy as np

from .data_synth import Cohort
from .errors import NumericalError, StateError
from .model import BrainNetMoE, ModelConfig, compute_loss, predict, save_checkpoint
from .nn import OptimizerState, adamw_step
from .seeding import substream

log = logging.getLogger(__name__)

METRIC_KEYS = ("ACC", "SEN", "SPE", "PRE", "F1")
AVERAGING_NOTE = "SEN/SPE/PRE/F1: one-vs-rest per class, macro (unweighted) mean; F1 = mean of per-class F1"


@dataclass
class TrainConfig:
    epochs: int = 32
    batch_size: int = 64
    lr: float = 1e-4
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    seed: int = 0
    shuffle: bool = True
    eval_every: int = 1

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch_size must be >= 1")
        if self.lr < 0 or self.weight_decay < 0:
            raise ValueError("lr and weight_decay must be >= 0")
        if self.eval_every < 1:
            raise ValueError("eval_every must be >= 1")


@dataclass
class MetricsReport:
    accuracy: float
    sensitivity: float
    specificity: float
    precision: float
    f1: float
    confusion: np.ndarray
    losses: list = field(default_factory=list)

    def as_row(self) -> dict:
        return {"ACC": self.accuracy, "SEN": self.sensitivity, "SPE": self.specificity,
                "PRE": self.precision, "F1": self.f1}

    def to_dict(self) -> dict:
        return {**self.as_row(), "confusion": self.confusion.tolist(), "averaging": AVERAGING_NOTE}

    def format_text(self, class_names=None) -> str:
        k = self.confusion.shape[0]
        names = class_names or [str(c) for c in range(k)]
        head = "  ".join(f"{m:>7}" for m in METRIC_KEYS)
        vals = "  ".join(f"{v:>7.2f}" for v in self.as_row().values())
        lines = [f"# {AVERAGING_NOTE}", head, vals, "", "confusion (rows = true, cols = predicted)"]
        width = max(6, *(len(n) for n in names))
        lines.append(" " * (width + 2) + " ".join(f"{n:>{width}}" for n in names))
        for name, row in zip(names, self.confusion):
            lines.append(f"{name:>{width}}  " + " ".join(f"{int(v):>{width}d}" for v in row))
        return "\n".join(lines) + "\n"


def confusion_matrix(y_true, y_pred, n_classes: int) -> np.ndarray:
    cm = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(cm, (np.asarray(y_true, dtype=np.int64), np.asarray(y_pred, dtype=np.int64)), 1)
    return cm


def _ratio(num: float, den: float) -> float:
    return num / den if den > 0 else 0.0


def metrics_from_confusion(cm) -> MetricsReport:
    """Percentages rounded to 2 decimals; undefined ratios count as 0."""
    cm = np.asarray(cm, dtype=np.int64)
    total = cm.sum()
    tp = np.diag(cm).astype(float)
    fn = cm.sum(axis=1) - tp
    fp = cm.sum(axis=0) - tp
    tn = total - tp - fn - fp
    sen = [_ratio(a, a + b) for a, b in zip(tp, fn)]
    spe = [_ratio(a, a + b) for a, b in zip(tn, fp)]
    pre = [_ratio(a, a + b) for a, b in zip(tp, fp)]
    f1 = [_ratio(2 * p * r, p + r) for p, r in zip(pre, sen)]

    def pct(x):
        return round(100.0 * float(x), 2)

    return MetricsReport(pct(_ratio(tp.sum(), total)), pct(np.mean(sen)), pct(np.mean(spe)),
                         pct(np.mean(pre)), pct(np.mean(f1)), cm)


def evaluate(model: BrainNetMoE, cohort: Cohort, split: str = "test") -> MetricsReport:
    x, y = cohort.normalized(split)
    if len(y) == 0:
        raise StateError(f"split {split!r} is empty")
    return metrics_from_confusion(confusion_matrix(y, predict(model, x), model.config.n_classes))


@dataclass
class TrainResult:
    model: BrainNetMoE
    history: list
    step_log: list
    eval_log: list

    @property
    def final(self) -> MetricsReport:
        return self.history[-1]


def _write_jsonl(fh, record: dict) -> None:
    if fh is not None:
        fh.write(json.dumps(record, sort_keys=True) + "\n")
        fh.flush()


def train(model: BrainNetMoE, cohort: Cohort, cfg: TrainConfig, out_dir=None,
          on_step: Callable[[dict], None] | None = None) -> TrainResult:
    """Mini-batch AdamW on the composite objective.

    Deterministic for a fixed ``cfg.seed`` and model init. With ``out_dir`` the
    metrics log (``metrics.jsonl``) and final checkpoint (``checkpoint/``) are
    written there.
    """
    x_train, y_train = cohort.normalized("train")
    if len(y_train) == 0:
        raise StateError("training split is empty")
    has_test = bool(cohort.indices("test"))
    params = model.parameters()
    state = OptimizerState.for_params(params, lr=cfg.lr, beta1=cfg.beta1, beta2=cfg.beta2,
                                      eps=cfg.eps, weight_decay=cfg.weight_decay)
    shuffle_rng = substream(cfg.seed, "shuffle")

    out_dir = Path(out_dir) if out_dir is not None else None
    fh = None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        fh = open(out_dir / "metrics.jsonl", "w", encoding="utf-8")

    step_log, eval_log, history = [], [], []
    step = 0
    try:
        for epoch in range(1, cfg.epochs + 1):
            order = shuffle_rng.permutation(len(y_train)) if cfg.shuffle else np.arange(len(y_train))
            for start in range(0, len(order), cfg.batch_size):
                idx = order[start:start + cfg.batch_size]
                model.zero_grad()
                try:
                    # overflow surfaces as NumericalError from the finite checks
                    with np.errstate(over="ignore", invalid="ignore"):
                        total, breakdown, _ = compute_loss(model, x_train[idx], y_train[idx])
                        total.backward()
                except NumericalError as exc:
                    raise NumericalError(f"non-finite value at step {step}: {exc}", step=step) from exc
                adamw_step(params, [p.grad for p in params], state)
                record = {"kind": "step", "epoch": epoch, "step": step, **breakdown.as_record(),
                          "weights": breakdown.weights}
                step_log.append(record)
                _write_jsonl(fh, record)
                if on_step is not None:
                    on_step(record)
                step += 1
            if has_test and (epoch % cfg.eval_every == 0 or epoch == cfg.epochs):
                report = evaluate(model, cohort, "test")
                history.append(report)
                rec = {"kind": "eval", "epoch": epoch, **report.as_row()}
                eval_log.append(rec)
                _write_jsonl(fh, rec)
                log.info("epoch %d: %s", epoch, report.as_row())
        if has_test and not history:
            report = evaluate(model, cohort, "test")
            history.append(report)
            rec = {"kind": "eval", "epoch": 0, **report.as_row()}
            eval_log.append(rec)
            _write_jsonl(fh, rec)
    finally:
        if fh is not None:
            fh.close()
    if out_dir is not None:
        save_checkpoint(model, out_dir / "checkpoint")
    if history:
        history[-1].losses = [{k: r[k] for k in ("cls", "e_d", "d_d", "e_b", "total")} for r in step_log]
    return TrainResult(model, history, step_log, eval_log)


# -- ablations -----------------------------------------------------------

@dataclass
class AblationVariant:
    name: str
    experts_per_group: int
    alpha: float
    beta: float
    gamma: float


@dataclass
class AblationPlan:
    variants: list

    @classmethod
    def default(cls, base: ModelConfig, experts=(2, 4), loss_toggles: bool = True) -> "AblationPlan":
        """Expert-count rows, single-loss-off rows, all-off row, then the full model."""
        w = base.loss
        variants = [AblationVariant(f"experts={e}", e, w.alpha, w.beta, w.gamma)
                    for e in experts if e != base.experts_per_group]
        if loss_toggles:
            variants += [
                AblationVariant("w/o L_e_d", base.experts_per_group, 0.0, w.beta, w.gamma),
                AblationVariant("w/o L_d_d", base.experts_per_group, w.alpha, 0.0, w.gamma),
                AblationVariant("w/o L_e_b", base.experts_per_group, w.alpha, w.beta, 0.0),
                AblationVariant("w/o L_e_d, L_d_d, L_e_b", base.experts_per_group, 0.0, 0.0, 0.0),
            ]
        variants.append(AblationVariant("full", base.experts_per_group, w.alpha, w.beta, w.gamma))
        return cls(variants)


def variant_config(base: ModelConfig, v: AblationVariant) -> ModelConfig:
    cfg = copy.deepcopy(base)
    loss = replace(cfg.loss, alpha=v.alpha, beta=v.beta, gamma=v.gamma, raw=None)
    if loss.learnable and min(v.alpha, v.beta, v.gamma) == 0:
        loss = replace(loss, learnable=False)
    return replace(cfg, experts_per_group=v.experts_per_group, loss=loss)


@dataclass
class AblationRow:
    variant: AblationVariant
    report: MetricsReport
    final_expert_balance: float
    step_log: list

    def to_dict(self) -> dict:
        return {"variant": self.variant.name, **self.report.as_row(),
                "final_expert_balance": self.final_expert_balance}


def run_variant(variant: AblationVariant, base_model: ModelConfig, cohort: Cohort,
                train_cfg: TrainConfig) -> AblationRow:
    model = BrainNetMoE(variant_config(base_model, variant))
    result = train(model, cohort, train_cfg)
    last_epoch = result.step_log[-1]["epoch"] if result.step_log else 0
    eb = [r["e_b"] for r in result.step_log if r["epoch"] == last_epoch]
    report = result.final if result.history else evaluate(model, cohort, "test")
    return AblationRow(variant, report, float(np.mean(eb)) if eb else float("nan"), result.step_log)


def run_ablation(plan: AblationPlan, base_model: ModelConfig, cohort: Cohort, train_cfg: TrainConfig,
                 on_row: Callable[[AblationRow], None] | None = None, jobs: int = 1) -> list[AblationRow]:
    """Train and evaluate every variant with the same seed and cohort."""
    rows: list = [None] * len(plan.variants)
    if jobs <= 1:
        for i, v in enumerate(plan.variants):
            rows[i] = run_variant(v, base_model, cohort, train_cfg)
            if on_row is not None:
                on_row(rows[i])
        return rows
    from concurrent.futures import ProcessPoolExecutor, as_completed

    with ProcessPoolExecutor(max_workers=jobs) as pool:
        futures = {pool.submit(run_variant, v, base_model, cohort, train_cfg): i
                   for i, v in enumerate(plan.variants)}
        for fut in as_completed(futures):
            i = futures[fut]
            rows[i] = fut.result()
            if on_row is not None:
                on_row(rows[i])
    return rows


def format_ablation_table(rows: list[AblationRow]) -> str:
    width = max(24, *(len(r.variant.name) for r in rows)) if rows else 24
    lines = [f"# {AVERAGING_NOTE}",
             f"{'Ablation':<{width}}  " + "  ".join(f"{m + '%':>7}" for m in METRIC_KEYS) + "  final_e_b"]
    for r in rows:
        vals = "  ".join(f"{v:>7.2f}" for v in r.report.as_row().values())
        lines.append(f"{r.variant.name:<{width}}  {vals}  {r.final_expert_balance:.6f}")
    return "\n".join(lines) + "\n"
