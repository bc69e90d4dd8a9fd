"""Multi-label evaluation: micro/macro F1 and AUC, precision@k.

Conventions: any zero denominator in precision, recall or F1 yields 0;
labels with a single gold class are excluded from macro-AUC and counted;
precision@k breaks score ties by the lower label index and always divides
by k.
"""

from __future__ import annotations

import json
from fractions import Fraction
from dataclasses import asdict, dataclass, field
from typing import Sequence

import numpy as np

from . import tensor as T
from .model import predict

DEFAULT_KS = (5, 8, 15)


class UndefinedMetricError(ValueError):
    pass


def _check(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    a, b = np.asarray(a), np.asarray(b)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch: {a.shape} vs {b.shape}")
    return a, b


def _f1(tp, fp, fn):
    """Precision, recall and F1; F1 is 2TP / (2TP + FP + FN), one rounding from exact."""
    tp, fp, fn = (np.asarray(x, dtype=float) for x in (tp, fp, fn))
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(tp + fp > 0, tp / (tp + fp), 0.0)
        r = np.where(tp + fn > 0, tp / (tp + fn), 0.0)
        f = np.where(tp > 0, 2 * tp / (2 * tp + fp + fn), 0.0)
    return p, r, f


def confusion(preds, gold) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-label true positive, false positive and false negative counts."""
    preds, gold = _check(preds, gold)
    preds, gold = preds.astype(bool), gold.astype(bool)
    tp = (preds & gold).sum(axis=0)
    fp = (preds & ~gold).sum(axis=0)
    fn = (~preds & gold).sum(axis=0)
    return tp, fp, fn


def micro_f1(preds, gold) -> float:
    tp, fp, fn = confusion(preds, gold)
    return float(_f1(tp.sum(), fp.sum(), fn.sum())[2])


def _exact_mean_f1(tp, fp, fn) -> float:
    # rational mean of the per-label F1 values, rounded once
    total = sum((Fraction(2 * int(a), 2 * int(a) + int(b) + int(c))
                 for a, b, c in zip(tp, fp, fn) if a > 0), Fraction(0))
    return float(total / len(tp))


def macro_f1(preds, gold) -> float:
    return _exact_mean_f1(*confusion(preds, gold))


def _midranks(x: np.ndarray) -> np.ndarray:
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], len(xs)]
    ranks = np.empty(len(x))
    ranks[order] = np.repeat((starts + ends + 1) / 2.0, ends - starts)
    return ranks


def binary_auc(scores, gold) -> float:
    """Mann-Whitney AUC with midranks for ties."""
    scores, gold = _check(np.ravel(scores), np.ravel(gold))
    pos = gold.astype(bool)
    n_pos, n_neg = int(pos.sum()), int((~pos).sum())
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("AUC needs at least one positive and one negative")
    ranks = _midranks(scores.astype(float))
    return float((ranks[pos].sum() - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def micro_auc(scores, gold) -> float:
    scores, gold = _check(scores, gold)
    return binary_auc(scores.ravel(), gold.ravel())


def macro_auc(scores, gold) -> tuple[float, int]:
    """Mean per-label AUC over labels with both classes, plus the excluded count."""
    scores, gold = _check(scores, gold)
    values, excluded = [], 0
    for j in range(gold.shape[1]):
        col = gold[:, j].astype(bool)
        if col.all() or not col.any():
            excluded += 1
            continue
        values.append(binary_auc(scores[:, j], col))
    if not values:
        raise UndefinedMetricError("no label has both positive and negative documents")
    return float(np.mean(values)), excluded


def top_k(scores_row: np.ndarray, k: int) -> np.ndarray:
    order = np.lexsort((np.arange(len(scores_row)), -np.asarray(scores_row)))
    return order[:k]


def precision_at_k(scores, gold, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    scores, gold = _check(scores, gold)
    hits = sum(int(gold[i, top_k(scores[i], k)].sum()) for i in range(scores.shape[0]))
    return hits / (scores.shape[0] * k)


@dataclass
class LabelStats:
    label: str
    precision: float
    recall: float
    f1: float
    support: int


@dataclass
class MetricReport:
    macro_auc: float | None
    micro_auc: float | None
    macro_f1: float
    micro_f1: float
    p_at_k: dict[int, float]
    macro_auc_excluded: int
    num_documents: int
    num_labels: int
    threshold: float
    per_label: list[LabelStats] = field(default_factory=list)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["p_at_k"] = {str(k): v for k, v in self.p_at_k.items()}
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def headline(self) -> dict[str, float]:
        d = {"macro_auc": self.macro_auc, "micro_auc": self.micro_auc,
             "macro_f1": self.macro_f1, "micro_f1": self.micro_f1}
        d.update({f"p@{k}": v for k, v in self.p_at_k.items()})
        return d

    def table_row(self, name: str = "model") -> str:
        """Results row in percent: macro/micro AUC, macro/micro F1, P@k."""
        cells = [self.macro_auc, self.micro_auc, self.macro_f1, self.micro_f1,
                 *self.p_at_k.values()]
        head = ["Macro-AUC", "Micro-AUC", "Macro-F1", "Micro-F1",
                *(f"P@{k}" for k in self.p_at_k)]
        width = max(len(name), 5)
        lines = [" " * width + " | " + " | ".join(f"{h:>9}" for h in head),
                 f"{name:<{width}} | " + " | ".join(
                     f"{'-':>9}" if c is None else f"{100 * c:9.1f}" for c in cells)]
        return "\n".join(lines)

    def to_text(self, name: str = "model") -> str:
        lines = [self.table_row(name), "",
                 f"documents: {self.num_documents}  labels: {self.num_labels}  "
                 f"threshold: {self.threshold}",
                 f"labels excluded from macro-AUC: {self.macro_auc_excluded}", "",
                 f"{'label':<16} {'precision':>9} {'recall':>9} {'f1':>9} {'support':>8}"]
        for s in self.per_label:
            lines.append(f"{s.label:<16} {s.precision:9.4f} {s.recall:9.4f} {s.f1:9.4f} {s.support:8d}")
        return "\n".join(lines) + "\n"


def compute_report(scores, gold, threshold: float = 0.5, labels: Sequence[str] | None = None,
                   ks: Sequence[int] = DEFAULT_KS) -> MetricReport:
    scores, gold = _check(scores, gold)
    preds = predict(scores, threshold)
    labels = list(labels) if labels is not None else [str(j) for j in range(gold.shape[1])]
    tp, fp, fn = confusion(preds, gold)
    p, r, f = _f1(tp, fp, fn)
    try:
        mauc, excluded = macro_auc(scores, gold)
    except UndefinedMetricError:
        mauc, excluded = None, gold.shape[1]
    try:
        uauc = micro_auc(scores, gold)
    except UndefinedMetricError:
        uauc = None
    per_label = [LabelStats(labels[j], float(p[j]), float(r[j]), float(f[j]),
                            int(gold[:, j].sum())) for j in range(gold.shape[1])]
    return MetricReport(
        macro_auc=mauc, micro_auc=uauc,
        macro_f1=_exact_mean_f1(tp, fp, fn), micro_f1=micro_f1(preds, gold),
        p_at_k={k: precision_at_k(scores, gold, k) for k in ks},
        macro_auc_excluded=excluded, num_documents=gold.shape[0], num_labels=gold.shape[1],
        threshold=threshold, per_label=per_label)


def frequency_buckets(report: MetricReport, train_counts: Sequence[int],
                      edges: Sequence[int] = (10, 50)) -> dict[str, float]:
    """Macro-F1 over labels grouped by training frequency (< edge boundaries)."""
    f1 = np.array([s.f1 for s in report.per_label])
    counts = np.asarray(train_counts)
    bounds = [0, *edges, np.inf]
    out = {}
    for lo, hi in zip(bounds[:-1], bounds[1:]):
        sel = (counts >= lo) & (counts < hi)
        if sel.any():
            out[f"[{lo},{hi})"] = float(f1[sel].mean())
    return out


def predict_scores(model, docs) -> tuple[np.ndarray, np.ndarray]:
    """Eval-mode probabilities and gold matrix for a list of processed documents."""
    scores = np.zeros((len(docs), model.config.num_labels))
    gold = np.zeros_like(scores)
    with T.no_grad():
        for i, doc in enumerate(docs):
            scores[i] = model.forward_document(doc, training=False).probs.data
            gold[i] = doc.gold_raw
    return scores, gold


def evaluate(model, docs, threshold: float = 0.5, labels: Sequence[str] | None = None,
             ks: Sequence[int] = DEFAULT_KS) -> MetricReport:
    if not docs:
        raise ValueError("cannot evaluate on an empty split")
    scores, gold = predict_scores(model, docs)
    return compute_report(scores, gold, threshold, labels, ks)
