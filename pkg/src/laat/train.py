"""Training objective, AdamW, plateau schedule, early stopping and the fit loop.

Randomness: ``seed_streams(seed)`` spawns three independent generators from
one ``SeedSequence`` -- ``init`` (parameter initialisation and fallback
embeddings), ``shuffle`` (per-epoch document order) and ``dropout``.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .data import ProcessedDocument
from .metrics import MetricReport, evaluate
from .model import ForwardTrace, LaatModel
from .tensor import Tensor

log = logging.getLogger(__name__)


@dataclass
class TrainConfig:
    lr: float = 0.001
    batch_size: int = 8
    max_epochs: int = 50
    scheduler_patience: int = 5
    scheduler_factor: float = 0.9
    early_stop_patience: int = 6
    threshold: float = 0.5
    seed: int = 0
    weight_decay: float = 0.01
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    grad_norm_warning: float = 1e3

    def __post_init__(self):
        self.betas = tuple(self.betas)
        if self.scheduler_patience < 1 or self.early_stop_patience < 1:
            raise ValueError("patience values must be >= 1")
        if not 0.0 < self.scheduler_factor < 1.0:
            raise ValueError("scheduler_factor must lie in (0, 1)")
        if self.batch_size < 1 or self.max_epochs < 0 or self.lr < 0:
            raise ValueError("batch_size >= 1, max_epochs >= 0 and lr >= 0 required")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["betas"] = list(self.betas)
        return d


def seed_streams(seed: int) -> dict[str, np.random.Generator]:
    init, shuffle, drop = np.random.SeedSequence(seed).spawn(3)
    return {"init": np.random.default_rng(init), "shuffle": np.random.default_rng(shuffle),
            "dropout": np.random.default_rng(drop)}


# ---------------------------------------------------------------------------
# objective

def bce_loss(logits: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy in logit form: softplus(z) - y z."""
    y = np.asarray(targets, dtype=np.float64)
    if y.shape != logits.shape:
        raise ValueError(f"targets shape {y.shape} != logits shape {logits.shape}")
    if not np.all((y == 0.0) | (y == 1.0)):
        raise ValueError("targets must be 0 or 1")
    return T.mean(T.softplus(logits) - logits * y)


def joint_loss(trace: ForwardTrace, gold_raw, gold_normalized) -> Tensor:
    if trace.level1_logits is None:
        raise ValueError("joint_loss needs a trace with first-level outputs")
    return bce_loss(trace.level1_logits, gold_normalized) + bce_loss(trace.logits, gold_raw)


def document_loss(model: LaatModel, trace: ForwardTrace, doc: ProcessedDocument) -> Tensor:
    if model.config.joint is not None:
        return joint_loss(trace, doc.gold_raw, doc.gold_normalized)
    return bce_loss(trace.logits, doc.gold_raw)


# ---------------------------------------------------------------------------
# optimizer

@dataclass
class OptimizerState:
    lr: float = 0.001
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    weight_decay: float = 0.01
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params: dict[str, Tensor], state: OptimizerState) -> None:
    """One decoupled-weight-decay Adam update using each parameter's ``grad``.

    Parameters whose grad is None are left untouched.
    """
    state.step += 1
    b1, b2 = state.betas
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, p in params.items():
        g = p.grad
        if g is None or not p.requires_grad:
            continue
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        p.data = p.data - state.lr * update - state.lr * state.weight_decay * p.data


# ---------------------------------------------------------------------------
# plateau handling

@dataclass
class SchedulerState:
    lr: float
    patience: int = 5
    factor: float = 0.9
    best: float = -math.inf
    bad_epochs: int = 0


def scheduler_step(state: SchedulerState, val_micro_f1: float) -> SchedulerState:
    """Scale lr by ``factor`` after ``patience`` epochs without strict improvement."""
    if val_micro_f1 > state.best:
        state.best = val_micro_f1
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
        if state.bad_epochs >= state.patience:
            state.lr *= state.factor
            state.bad_epochs = 0
    return state


@dataclass
class EarlyStopState:
    patience: int = 6
    best: float = -math.inf
    bad_epochs: int = 0


def early_stop_check(state: EarlyStopState, val_micro_f1: float) -> bool:
    """Record an epoch; True means stop."""
    if val_micro_f1 > state.best:
        state.best = val_micro_f1
        state.bad_epochs = 0
    else:
        state.bad_epochs += 1
    return state.bad_epochs >= state.patience


# ---------------------------------------------------------------------------
# loops

def _grad_norm(model: LaatModel) -> float:
    return math.sqrt(sum(float((p.grad ** 2).sum()) for _, p in model.trainable()
                         if p.grad is not None))


def accumulate_batch(model: LaatModel, docs: Sequence[ProcessedDocument],
                     rng: np.random.Generator | None, training: bool = True) -> float:
    """Backpropagate every document on its own tape; grads add up in the params."""
    total = 0.0
    for doc in docs:
        with T.new_tape():
            trace = model.forward_document(doc, training=training, rng=rng)
            loss = document_loss(model, trace, doc)
            T.backward(loss)
        total += loss.item()
    return total


def train_epoch(model: LaatModel, docs: Sequence[ProcessedDocument], config: TrainConfig,
                opt: OptimizerState, shuffle_rng: np.random.Generator,
                dropout_rng: np.random.Generator) -> float:
    if not docs:
        raise ValueError("cannot train on an empty split")
    order = shuffle_rng.permutation(len(docs))
    params = dict(model.trainable())
    total = 0.0
    for start in range(0, len(order), config.batch_size):
        batch = [docs[i] for i in order[start:start + config.batch_size]]
        model.zero_grad()
        total += accumulate_batch(model, batch, dropout_rng)
        norm = _grad_norm(model)
        if norm > config.grad_norm_warning:
            log.warning("gradient norm %.3g exceeds %.3g", norm, config.grad_norm_warning)
        adamw_step(params, opt)
    model.zero_grad()
    return total / len(docs)


@dataclass
class FitResult:
    best_epoch: int
    best_val_micro_f1: float
    best_state: dict[str, np.ndarray]
    best_report: MetricReport | None
    log: list[dict]
    stopped_early: bool


def fit(model: LaatModel, train_docs: Sequence[ProcessedDocument],
        val_docs: Sequence[ProcessedDocument], config: TrainConfig,
        labels: Sequence[str] | None = None,
        on_improve: Callable[[LaatModel, int, MetricReport], None] | None = None,
        log_path: str | Path | None = None) -> FitResult:
    """Train with plateau lr decay and early stopping on validation micro-F1.

    The model is left holding the parameters of the best epoch.
    """
    streams = seed_streams(config.seed)
    opt = OptimizerState(lr=config.lr, betas=config.betas, eps=config.eps,
                         weight_decay=config.weight_decay)
    sched = SchedulerState(config.lr, config.scheduler_patience, config.scheduler_factor)
    stopper = EarlyStopState(config.early_stop_patience)
    best_val, best_epoch, best_report = -math.inf, 0, None
    best_state = model.state_dict()
    records: list[dict] = []
    stopped = False
    fh = Path(log_path).open("w", encoding="utf-8", newline="\n") if log_path else None
    try:
        for epoch in range(1, config.max_epochs + 1):
            opt.lr = sched.lr
            loss = train_epoch(model, train_docs, config, opt, streams["shuffle"], streams["dropout"])
            report = evaluate(model, val_docs, config.threshold, labels)
            val = report.micro_f1
            improved = val > best_val
            if improved:
                best_val, best_epoch, best_report = val, epoch, report
                best_state = model.state_dict()
                if on_improve is not None:
                    on_improve(model, epoch, report)
            record = {"epoch": epoch, "loss": loss, "lr": opt.lr, "improved": improved,
                      "val": report.headline()}
            records.append(record)
            if fh:
                fh.write(json.dumps(record, sort_keys=True) + "\n")
                fh.flush()
            scheduler_step(sched, val)
            if early_stop_check(stopper, val):
                stopped = True
                break
    finally:
        if fh:
            fh.close()
    model.load_state_dict(best_state)
    return FitResult(best_epoch, best_val if records else float("nan"), best_state,
                     best_report, records, stopped)
